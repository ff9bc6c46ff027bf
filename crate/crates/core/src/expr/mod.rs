//! A small arithmetic expression language for user-defined fields.
//!
//! Expressions are parsed against a declared variable list, so every
//! variable node carries its slot index and evaluation can run against a
//! plain slice without any map lookups. This matters because field
//! expressions sit inside the integrator's inner loop.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | constant | variable | func '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! `pi` and `e` are reserved constants and cannot be declared as variables.

mod parser;

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

pub use parser::parse;

/// Binary operators in increasing binding strength.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    pub fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

/// Built-in functions with fixed arity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Abs,
    Exp,
    Log,
    Sqrt,
    Floor,
    Min,
    Max,
}

impl Func {
    pub const ALL: [Func; 10] = [
        Func::Sin,
        Func::Cos,
        Func::Tan,
        Func::Abs,
        Func::Exp,
        Func::Log,
        Func::Sqrt,
        Func::Floor,
        Func::Min,
        Func::Max,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Abs => "abs",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Floor => "floor",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }
}

/// Reserved named constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constant {
    Pi,
    E,
}

impl Constant {
    pub fn name(self) -> &'static str {
        match self {
            Constant::Pi => "pi",
            Constant::E => "e",
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Constant::Pi => std::f64::consts::PI,
            Constant::E => std::f64::consts::E,
        }
    }

    pub fn from_name(name: &str) -> Option<Constant> {
        match name {
            "pi" => Some(Constant::Pi),
            "e" => Some(Constant::E),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Const(Constant),
    /// Variable with its slot in the declared variable list.
    Var {
        name: String,
        slot: usize,
    },
    Neg(Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// A parsed expression together with the variable list it was parsed against.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    variables: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("function `{name}` at offset {offset} takes {expected} argument(s), got {found}")]
    Arity {
        name: String,
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid variable list: {0}")]
    Variables(String),
}

impl ParseError {
    /// Byte offset of the failure, when it refers to a position in the source.
    pub fn offset(&self) -> Option<usize> {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UnknownIdentifier { offset, .. }
            | ParseError::Arity { offset, .. } => Some(*offset),
            ParseError::Variables(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("domain error in `{node}`: {reason}")]
    Domain { node: String, reason: &'static str },
    #[error("missing binding for variable `{0}`")]
    MissingBinding(String),
}

impl Expr {
    pub(crate) fn new(root: Node, variables: Vec<String>) -> Self {
        Expr { root, variables }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    /// True when some node refers to `name`.
    pub fn uses_variable(&self, name: &str) -> bool {
        fn walk(node: &Node, name: &str) -> bool {
            match node {
                Node::Var { name: n, .. } => n == name,
                Node::Num(_) | Node::Const(_) => false,
                Node::Neg(a) => walk(a, name),
                Node::Binary(_, a, b) => walk(a, name) || walk(b, name),
                Node::Call(_, args) => args.iter().any(|a| walk(a, name)),
            }
        }
        walk(&self.root, name)
    }

    /// Evaluates with a name-keyed binding map.
    pub fn eval(&self, bindings: &HashMap<&str, f64>) -> Result<f64, EvalError> {
        let slots = self
            .variables
            .iter()
            .map(|v| {
                bindings
                    .get(v.as_str())
                    .copied()
                    .ok_or_else(|| EvalError::MissingBinding(v.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.eval_slots(&slots)
    }

    /// Evaluates with values given in declared-variable order.
    pub fn eval_slots(&self, slots: &[f64]) -> Result<f64, EvalError> {
        if slots.len() < self.variables.len() {
            return Err(EvalError::MissingBinding(
                self.variables[slots.len()].clone(),
            ));
        }
        eval_node(&self.root, slots)
    }
}

fn domain(node: &Node, reason: &'static str) -> EvalError {
    EvalError::Domain {
        node: node.to_string(),
        reason,
    }
}

fn eval_node(node: &Node, slots: &[f64]) -> Result<f64, EvalError> {
    Ok(match node {
        Node::Num(x) => *x,
        Node::Const(c) => c.value(),
        Node::Var { slot, .. } => slots[*slot],
        Node::Neg(a) => -eval_node(a, slots)?,
        Node::Binary(op, a, b) => {
            let x = eval_node(a, slots)?;
            let y = eval_node(b, slots)?;
            match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => {
                    if y == 0.0 {
                        return Err(domain(node, "division by zero"));
                    }
                    x / y
                }
                BinOp::Pow => {
                    let r = x.powf(y);
                    if r.is_nan() && !x.is_nan() && !y.is_nan() {
                        return Err(domain(node, "power undefined for these operands"));
                    }
                    r
                }
            }
        }
        Node::Call(func, args) => {
            let x = eval_node(&args[0], slots)?;
            match func {
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Tan => x.tan(),
                Func::Abs => x.abs(),
                Func::Exp => x.exp(),
                Func::Log => {
                    if x <= 0.0 {
                        return Err(domain(node, "logarithm of a non-positive number"));
                    }
                    x.ln()
                }
                Func::Sqrt => {
                    if x < 0.0 {
                        return Err(domain(node, "square root of a negative number"));
                    }
                    x.sqrt()
                }
                Func::Floor => x.floor(),
                Func::Min => x.min(eval_node(&args[1], slots)?),
                Func::Max => x.max(eval_node(&args[1], slots)?),
            }
        }
    })
}

impl fmt::Display for Node {
    /// Fully parenthesized canonical form; re-parses to the same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Num(x) => write!(f, "{x}"),
            Node::Const(c) => f.write_str(c.name()),
            Node::Var { name, .. } => f.write_str(name),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Node::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

/// Canonical fully parenthesized text of an expression.
pub fn print(expr: &Expr) -> String {
    expr.to_string()
}
