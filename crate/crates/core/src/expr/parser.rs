use super::{BinOp, Constant, Expr, Func, Node, ParseError};

/// Parses `source` against the declared variable names.
pub fn parse(source: &str, variables: &[String]) -> Result<Expr, ParseError> {
    for (i, v) in variables.iter().enumerate() {
        if !is_identifier(v) {
            return Err(ParseError::Variables(format!("`{v}` is not an identifier")));
        }
        if Constant::from_name(v).is_some() || Func::from_name(v).is_some() {
            return Err(ParseError::Variables(format!("`{v}` is a reserved name")));
        }
        if variables[..i].contains(v) {
            return Err(ParseError::Variables(format!("`{v}` declared twice")));
        }
    }
    let mut p = Parser {
        src: source.as_bytes(),
        pos: 0,
        variables,
    };
    p.skip_ws();
    if p.at_end() {
        return Err(p.syntax("empty expression"));
    }
    let root = p.expr()?;
    p.skip_ws();
    if !p.at_end() {
        return Err(p.syntax("unexpected trailing input"));
    }
    Ok(Expr::new(root, variables.to_vec()))
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    variables: &'a [String],
}

impl Parser<'_> {
    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn syntax(&self, message: &str) -> ParseError {
        ParseError::Syntax {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    /// Consumes `c` after optional whitespace.
    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat(b'+') {
                BinOp::Add
            } else if self.eat(b'-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat(b'*') {
                BinOp::Mul
            } else if self.eat(b'/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.primary()?;
        if self.eat(b'^') {
            let exponent = self.unary()?;
            return Ok(Node::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node, ParseError> {
        self.skip_ws();
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.syntax("expected `)`"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            Some(_) => Err(self.syntax("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while matches!(p.peek(), Some(c) if c.is_ascii_digit()) {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut n = digits(self);
        if self.peek() == Some(b'.') {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            self.pos = start;
            return Err(self.syntax("malformed number"));
        }
        // Exponent only when digits follow; a bare `e` is the constant.
        if matches!(self.peek(), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii slice");
        text.parse::<f64>()
            .map(Node::Num)
            .map_err(|_| ParseError::Syntax {
                offset: start,
                message: format!("malformed number `{text}`"),
            })
    }

    fn identifier(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii slice");

        if let Some(func) = Func::from_name(name) {
            if !self.eat(b'(') {
                return Err(self.syntax("expected `(` after function name"));
            }
            let mut args = vec![self.expr()?];
            while self.eat(b',') {
                args.push(self.expr()?);
            }
            if !self.eat(b')') {
                return Err(self.syntax("expected `,` or `)`"));
            }
            if args.len() != func.arity() {
                return Err(ParseError::Arity {
                    name: name.to_string(),
                    offset: start,
                    expected: func.arity(),
                    found: args.len(),
                });
            }
            return Ok(Node::Call(func, args));
        }
        if let Some(c) = Constant::from_name(name) {
            return Ok(Node::Const(c));
        }
        match self.variables.iter().position(|v| v == name) {
            Some(slot) => Ok(Node::Var {
                name: name.to_string(),
                slot,
            }),
            None => Err(ParseError::UnknownIdentifier {
                name: name.to_string(),
                offset: start,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn incomplete_expression_reports_end_offset() {
        let err = parse("u +", &names(&["u"])).unwrap_err();
        assert!(
            matches!(err, ParseError::Syntax { offset: 3, .. }),
            "{err:?}"
        );
    }

    #[test]
    fn unknown_identifier_and_arity() {
        let err = parse("u + w", &names(&["u"])).unwrap_err();
        assert_eq!(
            err,
            ParseError::UnknownIdentifier {
                name: "w".into(),
                offset: 4
            }
        );
        let err = parse("min(1)", &[]).unwrap_err();
        assert!(matches!(
            err,
            ParseError::Arity {
                expected: 2,
                found: 1,
                offset: 0,
                ..
            }
        ));
        let err = parse("cos(1, 2)", &[]).unwrap_err();
        assert!(matches!(
            err,
            ParseError::Arity {
                expected: 1,
                found: 2,
                ..
            }
        ));
    }

    #[test]
    fn syntax_errors_carry_positions() {
        for (src, off) in [
            ("", 0),
            ("   ", 3),
            ("(1 + 2", 6),
            ("1 2", 2),
            ("sin 2", 4),
            ("3 $", 2),
        ] {
            let err = parse(src, &[]).unwrap_err();
            assert_eq!(err.offset(), Some(off), "{src:?} -> {err:?}");
        }
    }

    #[test]
    fn rejects_bad_variable_lists() {
        assert!(parse("1", &names(&["pi"])).is_err());
        assert!(parse("1", &names(&["u", "u"])).is_err());
        assert!(parse("1", &names(&["sin"])).is_err());
        assert!(parse("1", &names(&["2x"])).is_err());
    }

    #[test]
    fn exponent_literals_and_constant_e() {
        let e = parse("2e-3 + e", &[]).unwrap();
        let x = e.eval_slots(&[]).unwrap();
        assert!((x - (2e-3 + std::f64::consts::E)).abs() < 1e-15);
        assert!(parse("2e", &[]).is_err());
    }

    #[test]
    fn whitespace_insensitive() {
        let a = parse("  u*( v+1 ) ", &names(&["u", "v"])).unwrap();
        let b = parse("u*(v+1)", &names(&["u", "v"])).unwrap();
        assert_eq!(a, b);
    }
}
