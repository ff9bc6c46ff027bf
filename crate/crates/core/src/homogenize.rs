//! The explicit scheme `v^{k+1} = v^k + fbar(v^k, k dt) dt` for the
//! homogenized equation `u' = fbar(u, t)`, the fine-step reference `u0`
//! built from it, and the modulus-of-continuity probe for `fbar`.

use std::io::Write;

use thiserror::Error;

use crate::field::{Builtin, ProblemField};
use crate::slope::{closed_form_slope, SlopeError, SlopeEstimate, SlopeSource};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HomogenizeError {
    #[error("invalid scheme request: {0}")]
    InvalidArgument(String),
    #[error("slope estimation failed at step {step} (v = {v}, t = {t}): {source}")]
    Slope {
        step: usize,
        v: f64,
        t: f64,
        source: SlopeError,
    },
    #[error("offset (dv={dv}, ds={ds}) outside the admissible range alpha (|dv| + |ds|) < 1")]
    OffsetOutOfRange { dv: f64, ds: f64 },
    #[error("modulus probe slope failed: {0}")]
    ProbeSlope(SlopeError),
}

/// Closed-form homogenized solutions of built-in fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticSolution {
    /// `u0 + slope t`
    Linear { u0: f64, slope: f64 },
    /// Solution of `u' = -sign(w) sqrt(w^2 - 1)` (zero for `|w| <= 1`), `w = u - shift`.
    CosineCell { u0: f64, shift: f64 },
}

impl AnalyticSolution {
    pub fn value_at(&self, t: f64) -> f64 {
        match *self {
            AnalyticSolution::Linear { u0, slope } => u0 + slope * t,
            AnalyticSolution::CosineCell { u0, shift } => {
                let w0 = u0 - shift;
                if w0.abs() <= 1.0 {
                    return u0;
                }
                // cosh(s)' = sinh(s) = sqrt(cosh(s)^2 - 1): the flow runs s down to 0.
                let s = (w0.abs().acosh() - t).max(0.0);
                shift + w0.signum() * s.cosh()
            }
        }
    }
}

/// Closed-form `u0(t)` when the effective slope is explicit.
pub fn analytic_solution(field: &ProblemField, u0: f64) -> Option<AnalyticSolution> {
    match field.builtin()? {
        Builtin::Example1 => Some(AnalyticSolution::CosineCell {
            u0,
            shift: field.offset(),
        }),
        Builtin::Constant(_) | Builtin::ShiftedCosine(_) | Builtin::Example3 => {
            closed_form_slope(field, u0, 0.0).map(|slope| AnalyticSolution::Linear { u0, slope })
        }
        Builtin::Example2 => None,
    }
}

/// Output of the scheme: nodes `(k dt, v^k)` and the slopes used between them.
#[derive(Debug, Clone)]
pub struct HomogenizedPath {
    pub dt: f64,
    breakpoints: Vec<(f64, f64)>,
    slopes: Vec<f64>,
    slope_estimates: Vec<SlopeEstimate>,
    pub analytic: Option<AnalyticSolution>,
}

impl HomogenizedPath {
    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn slope_estimates(&self) -> &[SlopeEstimate] {
        &self.slope_estimates
    }

    pub fn steps(&self) -> usize {
        self.slopes.len()
    }

    pub fn end_time(&self) -> f64 {
        self.breakpoints.last().expect("path has a start node").0
    }

    pub fn end_value(&self) -> f64 {
        self.breakpoints.last().expect("path has a start node").1
    }

    /// Piecewise-linear interpolant; constant beyond the ends.
    pub fn value_at(&self, t: f64) -> f64 {
        let n = self.slopes.len();
        if t <= 0.0 {
            return self.breakpoints[0].1;
        }
        let mut k = ((t / self.dt).floor() as usize).min(n);
        // Division rounding can land one cell off.
        if k < n && t >= self.breakpoints[k + 1].0 {
            k += 1;
        } else if k > 0 && t < self.breakpoints[k].0 {
            k -= 1;
        }
        if k >= n {
            return self.end_value();
        }
        let (tk, vk) = self.breakpoints[k];
        if t == tk {
            return vk;
        }
        vk + self.slopes[k] * (t - tk)
    }

    /// Accumulated slope uncertainty `sum_k radius_k dt`.
    pub fn propagated_radius(&self) -> f64 {
        self.slope_estimates
            .iter()
            .map(|e| e.certified_radius)
            .sum::<f64>()
            * self.dt
    }

    pub fn max_radius(&self) -> f64 {
        self.slope_estimates
            .iter()
            .map(|e| e.certified_radius)
            .fold(0.0, f64::max)
    }

    /// Lipschitz constant of the interpolant.
    pub fn lipschitz(&self) -> f64 {
        self.slopes.iter().map(|s| s.abs()).fold(0.0, f64::max)
    }

    /// Writes `k,t,v,lambda,radius`; the final node has empty slope columns.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "t", "v", "lambda", "radius"])?;
        for (k, &(t, v)) in self.breakpoints.iter().enumerate() {
            let (lambda, radius) = match self.slope_estimates.get(k) {
                Some(e) => (self.slopes[k].to_string(), e.certified_radius.to_string()),
                None => (String::new(), String::new()),
            };
            w.write_record([k.to_string(), t.to_string(), v.to_string(), lambda, radius])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `steps` steps of the scheme from `v0`.
pub fn run_scheme(
    v0: f64,
    dt: f64,
    steps: usize,
    source: &dyn SlopeSource,
) -> Result<HomogenizedPath, HomogenizeError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(HomogenizeError::InvalidArgument(format!(
            "dt must be positive, got {dt}"
        )));
    }
    if steps == 0 {
        return Err(HomogenizeError::InvalidArgument(
            "steps must be >= 1".into(),
        ));
    }
    if !v0.is_finite() {
        return Err(HomogenizeError::InvalidArgument(format!(
            "v0 must be finite, got {v0}"
        )));
    }
    let mut breakpoints = Vec::with_capacity(steps + 1);
    let mut slopes = Vec::with_capacity(steps);
    let mut estimates = Vec::with_capacity(steps);
    let mut v = v0;
    breakpoints.push((0.0, v));
    for k in 0..steps {
        let t = k as f64 * dt;
        let e = source
            .slope(v, t)
            .map_err(|source| HomogenizeError::Slope {
                step: k,
                v,
                t,
                source,
            })?;
        v += e.value * dt;
        slopes.push(e.value);
        estimates.push(e);
        breakpoints.push(((k + 1) as f64 * dt, v));
    }
    Ok(HomogenizedPath {
        dt,
        breakpoints,
        slopes,
        slope_estimates: estimates,
        analytic: None,
    })
}

/// Fine-step scheme on `[0, t_end]` serving as the `u0` reference for
/// experiments run at step `dt_experiment`. The step is `t_end / ceil(t_end / dt_ref)`.
pub fn reference_solution(
    field: &ProblemField,
    u0: f64,
    t_end: f64,
    dt_ref: f64,
    dt_experiment: f64,
    source: &dyn SlopeSource,
) -> Result<HomogenizedPath, HomogenizeError> {
    if !(t_end > 0.0) {
        return Err(HomogenizeError::InvalidArgument(format!(
            "t_end must be positive, got {t_end}"
        )));
    }
    if !(dt_ref > 0.0 && dt_ref <= dt_experiment / 8.0) {
        return Err(HomogenizeError::InvalidArgument(format!(
            "dt_ref = {dt_ref} must be positive and at most dt_experiment / 8 = {}",
            dt_experiment / 8.0
        )));
    }
    let steps = (t_end / dt_ref).ceil() as usize;
    let mut path = run_scheme(u0, t_end / steps as f64, steps, source)?;
    path.analytic = analytic_solution(field, u0);
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulusRow {
    pub dv: f64,
    pub ds: f64,
    /// `|fbar(u + dv, t + ds) - fbar(u, t)|` from the estimates.
    pub lhs: f64,
    /// Sum of the two certified radii.
    pub slack: f64,
    /// `xi_bar / |log(alpha (|dv| + |ds|))|`, zero when `alpha = 0`.
    pub rhs: f64,
}

impl ModulusRow {
    /// The bound holds for every slope pair consistent with the estimates.
    pub fn holds(&self) -> bool {
        self.lhs + self.slack <= self.rhs
    }
}

/// Compares slope differences at the given offsets with the logarithmic modulus of continuity.
pub fn modulus_probe(
    field: &ProblemField,
    u: f64,
    t: f64,
    offsets: &[(f64, f64)],
    source: &dyn SlopeSource,
) -> Result<Vec<ModulusRow>, HomogenizeError> {
    for &(dv, ds) in offsets {
        let r = field.alpha * (dv.abs() + ds.abs());
        if !(dv.abs() + ds.abs() > 0.0 && r < 1.0) {
            return Err(HomogenizeError::OffsetOutOfRange { dv, ds });
        }
    }
    let base = source.slope(u, t).map_err(HomogenizeError::ProbeSlope)?;
    let xi_bar = field.xi_bar();
    offsets
        .iter()
        .map(|&(dv, ds)| {
            let e = source
                .slope(u + dv, t + ds)
                .map_err(HomogenizeError::ProbeSlope)?;
            Ok(ModulusRow {
                dv,
                ds,
                lhs: (e.value - base.value).abs(),
                slack: e.certified_radius + base.certified_radius,
                rhs: xi_bar / (field.alpha * (dv.abs() + ds.abs())).ln().abs(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::builtin;
    use crate::slope::{DirectSlope, ExactSlope, SlopeOptions};

    #[test]
    fn example3_scheme_is_linear() {
        let f = builtin("example3", &[]).unwrap();
        let src = DirectSlope {
            field: &f,
            opts: SlopeOptions::default(),
        };
        let p = run_scheme(0.0, 0.1, 10, &src).unwrap();
        for (k, &(t, v)) in p.breakpoints().iter().enumerate() {
            assert!((t - 0.1 * k as f64).abs() < 1e-15);
            assert!((v + 0.1 * k as f64).abs() < 1e-3 * k as f64 * 0.1 + 1e-12);
        }
        assert!((p.value_at(1.0) + 1.0).abs() < 1e-3);
    }

    #[test]
    fn one_step_example1() {
        let f = builtin("example1", &[]).unwrap();
        let src = DirectSlope {
            field: &f,
            opts: SlopeOptions::default(),
        };
        let p = run_scheme(2.0, 0.01, 1, &src).unwrap();
        let e = p.slope_estimates()[0];
        assert!(
            (p.end_value() - (2.0 - 3f64.sqrt() * 0.01)).abs() <= e.certified_radius * 0.01 + 1e-15
        );
    }

    #[test]
    fn scheme_identity_is_bit_exact() {
        let f = builtin("example1", &[]).unwrap();
        let src = ExactSlope { field: &f };
        let p = run_scheme(2.5, 0.013, 50, &src).unwrap();
        for k in 0..p.steps() {
            let (t0, v0) = p.breakpoints()[k];
            let (_, v1) = p.breakpoints()[k + 1];
            assert_eq!(v1, v0 + p.slopes()[k] * p.dt);
            assert_eq!(p.value_at(t0), v0);
        }
    }

    #[test]
    fn constant_path_is_straight() {
        let f = builtin("constant", &[0.7]).unwrap();
        let p = run_scheme(1.0, 0.25, 8, &ExactSlope { field: &f }).unwrap();
        for t in [0.0, 0.1, 0.77, 1.5, 2.0] {
            assert!((p.value_at(t) - (1.0 + 0.7 * t)).abs() < 1e-14);
        }
        assert_eq!(p.propagated_radius(), 0.0);
    }

    #[test]
    fn invalid_requests() {
        let f = builtin("constant", &[1.0]).unwrap();
        let src = ExactSlope { field: &f };
        assert!(run_scheme(0.0, 0.0, 1, &src).is_err());
        assert!(run_scheme(0.0, 0.1, 0, &src).is_err());
        assert!(reference_solution(&f, 0.0, 1.0, 0.1, 0.4, &src).is_err());
        let f2 = builtin("example2", &[]).unwrap();
        let err = run_scheme(0.0, 0.1, 1, &ExactSlope { field: &f2 }).unwrap_err();
        assert!(matches!(err, HomogenizeError::Slope { step: 0, .. }));
    }

    #[test]
    fn reference_attaches_closed_forms() {
        let f3 = builtin("example3", &[]).unwrap();
        let p = reference_solution(&f3, 0.0, 1.0, 0.01, 0.1, &ExactSlope { field: &f3 }).unwrap();
        let a = p.analytic.unwrap();
        assert_eq!(a.value_at(0.6), -0.6);
        assert!((p.end_value() + 1.0).abs() < 1e-12);

        let c = builtin("constant", &[-0.5]).unwrap();
        let p = reference_solution(&c, 2.0, 1.0, 0.01, 0.1, &ExactSlope { field: &c }).unwrap();
        assert_eq!(p.analytic.unwrap().value_at(1.0), 1.5);
    }

    #[test]
    fn example1_closed_form() {
        let f = builtin("example1", &[]).unwrap();
        let a = analytic_solution(&f, 2.0).unwrap();
        assert!((a.value_at(1.0) - 1.050_653_093_1).abs() < 1e-9);
        assert_eq!(a.value_at(10.0), 1.0);
        assert_eq!(analytic_solution(&f, 0.5).unwrap().value_at(3.0), 0.5);
        let b = analytic_solution(&f, -2.0).unwrap();
        assert!((b.value_at(1.0) + 1.050_653_093_1).abs() < 1e-9);
    }

    #[test]
    fn example1_reference_converges_to_closed_form() {
        let f = builtin("example1", &[]).unwrap();
        let src = ExactSlope { field: &f };
        let exact = analytic_solution(&f, 2.0).unwrap().value_at(0.5);
        let mut last = f64::INFINITY;
        for dt in [0.01, 0.005, 0.0025] {
            let p = reference_solution(&f, 2.0, 0.5, dt, 0.1, &src).unwrap();
            let err = (p.end_value() - exact).abs();
            assert!(err < last);
            last = err;
            let mut prev = f64::INFINITY;
            for &(_, v) in p.breakpoints() {
                assert!(v < prev);
                prev = v;
            }
        }
    }

    #[test]
    fn modulus_probe_cases() {
        let f2 = builtin("example2", &[]).unwrap();
        let src = DirectSlope {
            field: &f2,
            opts: SlopeOptions::default(),
        };
        let rows = modulus_probe(&f2, -1e-2, 0.0, &[(-1e-4, 0.0), (1e-6, 0.0)], &src).unwrap();
        assert!(rows.iter().all(ModulusRow::holds));

        let c = builtin("constant", &[2.0]).unwrap();
        let rows = modulus_probe(&c, 0.0, 0.0, &[(0.3, 0.1)], &ExactSlope { field: &c }).unwrap();
        assert_eq!(rows[0].lhs, 0.0);

        let f3 = builtin("example3", &[]).unwrap();
        let src3 = DirectSlope {
            field: &f3,
            opts: SlopeOptions {
                horizon: 1e3,
                ..Default::default()
            },
        };
        let rows = modulus_probe(&f3, 0.0, 0.0, &[(0.1, 0.05)], &src3).unwrap();
        assert!(rows[0].lhs <= rows[0].slack);

        assert!(matches!(
            modulus_probe(&f2, 0.0, 0.0, &[(0.2, 0.0)], &src),
            Err(HomogenizeError::OffsetOutOfRange { .. })
        ));
    }
}
