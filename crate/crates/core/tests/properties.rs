mod common;

use homlab::field::{builtin, validate, ValidateOptions};
use homlab::homogenize::{analytic_solution, run_scheme};
use homlab::integrator::ToleranceSpec;
use homlab::slope::{
    effective_field, estimate_trajectory, integrator_slack, linspace, ExactSlope, SlopeOptions,
};
use proptest::prelude::*;

#[test]
fn comparison_principle() {
    common::comparison_principle(32).unwrap();
}

#[test]
fn slope_is_independent_of_initial_value() {
    common::slope_v0_independence(24).unwrap();
}

#[test]
fn slope_is_monotone_in_u() {
    common::slope_monotonicity(48).unwrap();
}

#[test]
fn ergodic_envelope() {
    common::ergodic_envelope(24).unwrap();
}

#[test]
fn window_bracket_width() {
    common::window_width(24).unwrap();
}

#[test]
fn parser_round_trip() {
    common::parser_round_trip(200).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn builtins_are_periodic_in_fast_variables(
        field in common::arb_builtin(),
        v in -5.0..5.0f64, tau in -5.0..5.0f64, u in -4.0..4.0f64, t in 0.0..2.0f64,
        k in 1i32..=3, j in 1i32..=3,
    ) {
        let base = field.evaluate(v, tau, u, t);
        let shifted = field.evaluate(v + k as f64, tau + j as f64, u, t);
        prop_assert!((base - shifted).abs() <= 1e-9, "{base} vs {shifted}");
    }

    #[test]
    fn builtins_are_nonincreasing_in_u(
        field in common::arb_builtin(),
        v in 0.0..1.0f64, tau in 0.0..1.0f64, u in -4.0..4.0f64, du in 0.0..1.0f64,
    ) {
        prop_assert!(field.evaluate(v, tau, u + du, 0.0) <= field.evaluate(v, tau, u, 0.0) + 1e-15);
    }

    #[test]
    fn scheme_preserves_order_with_constant_slopes(
        which in 0usize..3, a in -3.0..3.0f64, gap in 0.0..1.0f64, dt in 1e-3..0.1f64,
    ) {
        let field = [
            builtin("example3", &[]).unwrap(),
            builtin("constant", &[0.3]).unwrap(),
            builtin("shifted_cosine", &[1.5]).unwrap(),
        ][which].clone();
        let src = ExactSlope { field: &field };
        let pa = run_scheme(a, dt, 50, &src).unwrap();
        let pb = run_scheme(a + gap, dt, 50, &src).unwrap();
        for (x, y) in pa.breakpoints().iter().zip(pb.breakpoints()) {
            prop_assert!(x.1 <= y.1, "{:?} > {:?}", x, y);
        }
    }

    // The Euler map u - sqrt(u^2 - 1) dt is monotone only while dt |fbar'| <= 1,
    // so example1 runs stay in u >= 1.16 where that holds for dt <= 0.02.
    #[test]
    fn scheme_preserves_order_away_from_pinning(a in 2.5..3.0f64, gap in 0.0..0.5f64, dt in 1e-3..0.02f64) {
        let field = builtin("example1", &[]).unwrap();
        let src = ExactSlope { field: &field };
        let pa = run_scheme(a, dt, 20, &src).unwrap();
        let pb = run_scheme(a + gap, dt, 20, &src).unwrap();
        for (x, y) in pa.breakpoints().iter().zip(pb.breakpoints()) {
            prop_assert!(x.1 <= y.1, "{:?} > {:?}", x, y);
        }
    }

    #[test]
    fn scheme_paths_are_beta_lipschitz(u0 in -3.0..3.0f64, dt in 1e-3..0.1f64) {
        let field = builtin("example1", &[]).unwrap();
        let path = run_scheme(u0, dt, 40, &ExactSlope { field: &field }).unwrap();
        prop_assert!(path.lipschitz() <= field.beta + path.max_radius());
    }
}

#[test]
fn horizon_doubling_shrinks_radius() {
    let tol = ToleranceSpec::default();
    for name in ["example1", "example3"] {
        let f = builtin(name, &[]).unwrap();
        for h in [100.0, 1000.0] {
            let a = estimate_trajectory(&f, 2.0, 0.0, h, tol).unwrap();
            let b = estimate_trajectory(&f, 2.0, 0.0, 2.0 * h, tol).unwrap();
            assert!(b.certified_radius <= a.certified_radius / 2.0 + 10.0 * tol.abs_tol);
            assert!(b.certified_radius >= f.xi() / (2.0 * h));
            assert!(a.certified_radius - f.xi() / h <= integrator_slack(tol, h) + 1e-12);
        }
    }
}

#[test]
fn builtins_validate_clean() {
    for name in ["example1", "example2", "example3"] {
        let f = builtin(name, &[]).unwrap();
        let report = validate(&f, ValidateOptions::default()).unwrap();
        assert!(report.passes(&f), "{name}: {report:?}");
    }
}

#[test]
fn table_monotone_in_u() {
    let f = builtin("example2", &[]).unwrap();
    let table = effective_field(
        &f,
        &linspace(-1.0, 0.5, 16),
        &[0.0],
        &SlopeOptions {
            horizon: 2e3,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(table.monotonicity_excess() <= 0.0);
    assert!(table.monotonicity_excess() <= 2.0 * table.max_radius());
}

#[test]
fn scheme_error_shrinks_with_dt() {
    for (name, u0) in [("example1", 2.0), ("example1", 1.3), ("constant", 0.0)] {
        let params: &[f64] = if name == "constant" { &[-0.5] } else { &[] };
        let f = builtin(name, params).unwrap();
        let exact = analytic_solution(&f, u0).unwrap();
        let src = ExactSlope { field: &f };
        let mut last = f64::INFINITY;
        for dt in [0.1f64, 0.05, 0.025] {
            let steps = (1.0 / dt).round() as usize;
            let p = run_scheme(u0, dt, steps, &src).unwrap();
            let e0 = (p.end_value() - exact.value_at(1.0)).abs();
            assert!(e0 <= last + 1e-15, "{name} u0={u0} dt={dt}: {e0} > {last}");
            last = e0;
        }
    }
}
