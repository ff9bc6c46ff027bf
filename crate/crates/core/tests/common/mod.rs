//! Property suites shared by the `properties` and `acceptance` targets.
//! Each suite returns `Err` with the shrunk counterexample on the first violation.

#![allow(dead_code)]

use homlab::expr::{self, BinOp, Constant, Func, Node};
use homlab::field::{builtin, ProblemField};
use homlab::integrator::{solve_cell, solve_oscillatory, ToleranceSpec};
use homlab::slope::{
    estimate_best, estimate_trajectory, estimate_trajectory_from, estimate_window,
    integrator_slack, SlopeOptions,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

pub const CELL_HORIZON: f64 = 1e3;

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn finish(
    r: Result<(), proptest::test_runner::TestError<impl std::fmt::Debug>>,
) -> Result<(), String> {
    r.map_err(|e| e.to_string())
}

/// Any built-in, with parameters drawn from moderate ranges.
pub fn arb_builtin() -> impl Strategy<Value = ProblemField> {
    prop_oneof![
        Just(builtin("example1", &[]).unwrap()),
        Just(builtin("example2", &[]).unwrap()),
        Just(builtin("example3", &[]).unwrap()),
        (-2.0..2.0f64).prop_map(|c| builtin("constant", &[c]).unwrap()),
        (-3.0..3.0f64).prop_map(|a| builtin("shifted_cosine", &[a]).unwrap()),
    ]
}

fn cell_opts() -> SlopeOptions {
    SlopeOptions {
        horizon: CELL_HORIZON,
        ..SlopeOptions::default()
    }
}

/// Ordered initial data stay ordered under the eps-flow.
pub fn comparison_principle(cases: u32) -> Result<(), String> {
    let tol = ToleranceSpec::default();
    let strategy = (arb_builtin(), 1e-2..1e-1f64, -3.0..3.0f64, 0.0..1.0f64);
    finish(runner(cases).run(&strategy, |(field, eps, a, gap)| {
        let b = a + gap;
        let ua = solve_oscillatory(&field, eps, a, 1.0, tol)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        let ub = solve_oscillatory(&field, eps, b, 1.0, tol)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        for i in 0..=200 {
            let t = i as f64 / 200.0;
            let (xa, xb) = (ua.value_at(t), ub.value_at(t));
            prop_assert!(xa <= xb + 10.0 * tol.abs_tol, "t={t}: {xa} > {xb}");
        }
        Ok(())
    }))
}

/// Trajectory slopes from `v0 = 0` and `v0 = 0.37` agree within their radii.
pub fn slope_v0_independence(cases: u32) -> Result<(), String> {
    let tol = ToleranceSpec::default();
    let strategy = (arb_builtin(), -3.5..3.5f64, 0.0..1.0f64, 0.0..1.0f64);
    finish(runner(cases).run(&strategy, |(field, u, t, v0)| {
        for start in [0.37, v0] {
            let a = estimate_trajectory(&field, u, t, CELL_HORIZON, tol)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            let b = estimate_trajectory_from(&field, u, t, start, CELL_HORIZON, tol)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert!(
                (a.value - b.value).abs() <= a.certified_radius + b.certified_radius,
                "v0={start}: {} vs {}",
                a.value,
                b.value
            );
        }
        Ok(())
    }))
}

/// `fbar` is non-increasing in `u` up to the two radii.
pub fn slope_monotonicity(cases: u32) -> Result<(), String> {
    let strategy = (arb_builtin(), -3.5..3.5f64, 0.0..2.0f64, 0.0..1.0f64);
    finish(runner(cases).run(&strategy, |(field, u1, du, t)| {
        let u2 = (u1 + du).min(3.9);
        let a = estimate_best(&field, u1, t, &cell_opts())
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        let b = estimate_best(&field, u2, t, &cell_opts())
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(
            b.value <= a.value + a.certified_radius + b.certified_radius,
            "fbar({u2}) = {} > fbar({u1}) = {}",
            b.value,
            a.value
        );
        Ok(())
    }))
}

/// `|v(s) - v(s') - lambda_hat (s - s')| <= xi + (xi / H)|s - s'| + slack` along a cell trajectory.
pub fn ergodic_envelope(cases: u32) -> Result<(), String> {
    let tol = ToleranceSpec::default();
    let strategy = (arb_builtin(), -3.5..3.5f64, 0.0..1.0f64, 0.0..1.0f64);
    finish(runner(cases).run(&strategy, |(field, u, t, v0)| {
        let h = CELL_HORIZON;
        let traj =
            solve_cell(&field, u, t, v0, h, tol).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let lambda = (traj.end_value() - v0) / h;
        let xi = field.xi();
        let slack = 2.0 * integrator_slack(tol, h) * h;
        let n = 400;
        let pts: Vec<(f64, f64)> = (0..=n)
            .map(|i| {
                let s = h * i as f64 / n as f64;
                (s, traj.value_at(s))
            })
            .collect();
        for i in 0..=n {
            for j in i + 1..=n {
                let (s, vs) = pts[i];
                let (s2, vs2) = pts[j];
                let dev = (vs2 - vs - lambda * (s2 - s)).abs();
                prop_assert!(
                    dev <= xi + xi / h * (s2 - s) + slack,
                    "s={s}, s'={s2}: {dev} > xi={xi}"
                );
            }
        }
        Ok(())
    }))
}

/// Window brackets are no wider than `2 xi / window` plus slack.
pub fn window_width(cases: u32) -> Result<(), String> {
    let tol = ToleranceSpec::default();
    let strategy = (arb_builtin(), -3.5..3.5f64, 0.0..1.0f64, 20.0..100.0f64);
    finish(runner(cases).run(&strategy, |(field, u, t, window)| {
        let w = estimate_window(&field, u, t, 2.0 * CELL_HORIZON, window, 0.73, tol)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        let bound = 2.0 * field.xi() / window + 2.0 * integrator_slack(tol, window);
        prop_assert!(w.width() <= bound, "width {} > {bound}", w.width());
        Ok(())
    }))
}

fn arb_ast() -> impl Strategy<Value = Node> {
    let names = ["v", "tau", "u", "t"];
    let leaf = prop_oneof![
        (0u32..1_000_000, 0i32..6).prop_map(|(m, s)| Node::Num(m as f64 / 10f64.powi(s))),
        Just(Node::Const(Constant::Pi)),
        Just(Node::Const(Constant::E)),
        (0..4usize).prop_map(move |i| Node::Var {
            name: names[i].to_string(),
            slot: i
        }),
    ];
    leaf.prop_recursive(6, 64, 3, |inner| {
        let ops = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow];
        prop_oneof![
            inner.clone().prop_map(|a| Node::Neg(Box::new(a))),
            (0..5usize, inner.clone(), inner.clone()).prop_map(move |(k, a, b)| Node::Binary(
                ops[k],
                Box::new(a),
                Box::new(b)
            )),
            (0..Func::ALL.len(), inner.clone(), inner).prop_map(|(i, a, b)| {
                let func = Func::ALL[i];
                let args = if func.arity() == 2 {
                    vec![a, b]
                } else {
                    vec![a]
                };
                Node::Call(func, args)
            }),
        ]
    })
}

/// Minimal fully parenthesized rendering, independent of the crate's printer.
pub fn render(node: &Node) -> String {
    match node {
        Node::Num(x) => format!("{x}"),
        Node::Const(c) => c.name().to_string(),
        Node::Var { name, .. } => name.clone(),
        Node::Neg(a) => format!("(-{})", render(a)),
        Node::Binary(op, a, b) => format!("({} {} {})", render(a), op.symbol(), render(b)),
        Node::Call(f, args) => format!(
            "{}({})",
            f.name(),
            args.iter().map(render).collect::<Vec<_>>().join(", ")
        ),
    }
}

/// Random ASTs survive render -> parse and print -> parse unchanged.
pub fn parser_round_trip(cases: u32) -> Result<(), String> {
    let names: Vec<String> = ["v", "tau", "u", "t"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    finish(runner(cases).run(&arb_ast(), |node| {
        let text = render(&node);
        let parsed =
            expr::parse(&text, &names).map_err(|e| TestCaseError::fail(format!("{text}: {e}")))?;
        prop_assert_eq!(parsed.root(), &node);
        let printed = expr::print(&parsed);
        let reparsed = expr::parse(&printed, &names)
            .map_err(|e| TestCaseError::fail(format!("{printed}: {e}")))?;
        prop_assert_eq!(&reparsed, &parsed);
        prop_assert_eq!(expr::print(&reparsed), printed);
        Ok(())
    }))
}
