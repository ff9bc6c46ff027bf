//! Scalar ODE integration robust at the oscillation scale.
//!
//! One adaptive core (Dormand-Prince 5(4), FSAL, PI step control) serves the
//! oscillatory problem `u' = f(u/eps, t/eps, u, t)`, the frozen cell problem
//! `v' = f(v, tau, u, t)` and the transport characteristics. Every accepted
//! step is recorded together with the right-hand side at that node, so the
//! trajectory can be evaluated anywhere by cubic Hermite interpolation.

use std::io::Write;

use thiserror::Error;

use crate::field::ProblemField;

/// Smallest step the controller may take before giving up.
pub const MIN_STEP: f64 = 1e-15;

/// Step cap of the cell problem, one twentieth of the unit period.
pub const CELL_MAX_STEP: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrationError {
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("non-finite right-hand side at t = {t}, y = {y}")]
    NonFiniteRhs { t: f64, y: f64 },
    #[error("invalid integration request: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for ToleranceSpec {
    fn default() -> Self {
        ToleranceSpec {
            rel_tol: 1e-9,
            abs_tol: 1e-9,
        }
    }
}

impl ToleranceSpec {
    pub fn new(rel_tol: f64, abs_tol: f64) -> Self {
        ToleranceSpec { rel_tol, abs_tol }
    }

    /// Both tolerances halved.
    pub fn halved(self) -> Self {
        ToleranceSpec::new(self.rel_tol / 2.0, self.abs_tol / 2.0)
    }

    /// The larger of the two tolerances; used to size integrator slack.
    pub fn scale(&self) -> f64 {
        self.rel_tol.max(self.abs_tol)
    }

    fn check(&self) -> Result<(), IntegrationError> {
        if self.rel_tol >= 0.0
            && self.abs_tol > 0.0
            && self.rel_tol.is_finite()
            && self.abs_tol.is_finite()
        {
            Ok(())
        } else {
            Err(IntegrationError::InvalidArgument(format!(
                "tolerances must satisfy rel_tol >= 0 and abs_tol > 0 (got {self:?})"
            )))
        }
    }
}

/// Dense sampled solution of a scalar ODE.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Oscillation scale of the solved problem; `None` for cell problems.
    pub epsilon: Option<f64>,
    times: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub rhs_evals: u64,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.values.iter().copied())
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self
            .times
            .last()
            .expect("trajectory has at least one sample")
    }

    pub fn end_value(&self) -> f64 {
        *self
            .values
            .last()
            .expect("trajectory has at least one sample")
    }

    /// Hermite interpolation between accepted steps; clamps outside the span.
    pub fn value_at(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (d0, d1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * d0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * d1
    }

    /// Writes the samples as CSV with columns `t,u`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "u"])?;
        for (t, u) in self.samples() {
            w.write_record([t.to_string(), u.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th and embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates `y' = rhs(t, y)` from `(t0, y0)` to `t_end`, recording every accepted step.
///
/// The error of a step is measured against `abs_tol + rel_tol * max(|y_n|, |y_{n+1}|)`.
pub fn integrate<F>(
    rhs: F,
    t0: f64,
    y0: f64,
    t_end: f64,
    max_step: f64,
    tol: ToleranceSpec,
    epsilon: Option<f64>,
) -> Result<Trajectory, IntegrationError>
where
    F: Fn(f64, f64) -> f64,
{
    tol.check()?;
    if !(t_end > t0) || !t0.is_finite() || !t_end.is_finite() {
        return Err(IntegrationError::InvalidArgument(format!(
            "need finite t0 < t_end (got {t0}, {t_end})"
        )));
    }
    if !(max_step > 0.0) {
        return Err(IntegrationError::InvalidArgument(format!(
            "max_step must be positive, got {max_step}"
        )));
    }
    if !y0.is_finite() {
        return Err(IntegrationError::InvalidArgument(format!(
            "initial value {y0} is not finite"
        )));
    }
    let span = t_end - t0;
    let reserve = ((span / max_step).ceil() as usize)
        .saturating_add(2)
        .min(1 << 24);

    let mut traj = Trajectory {
        epsilon,
        times: Vec::with_capacity(reserve),
        values: Vec::with_capacity(reserve),
        slopes: Vec::with_capacity(reserve),
        rel_tol: tol.rel_tol,
        abs_tol: tol.abs_tol,
        max_step,
        rhs_evals: 0,
    };
    let mut evals = 0u64;
    let mut f = |t: f64, y: f64| -> Result<f64, IntegrationError> {
        evals += 1;
        let v = rhs(t, y);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(IntegrationError::NonFiniteRhs { t, y })
        }
    };

    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, y)?;
    traj.times.push(t);
    traj.values.push(y);
    traj.slopes.push(k1);

    let mut h = (0.1 * max_step).min(span);
    let mut err_prev: f64 = 1e-4;
    let mut rejected_last = false;
    // PI controller exponents for a 5th order pair.
    const ALPHA: f64 = 0.7 / 5.0;
    const BETA: f64 = 0.4 / 5.0;
    const SAFETY: f64 = 0.9;

    while t < t_end {
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        if h < MIN_STEP {
            return Err(IntegrationError::StepUnderflow { t, h });
        }
        let k2 = f(t + C2 * h, y + h * A21 * k1)?;
        let k3 = f(t + C3 * h, y + h * (A31 * k1 + A32 * k2))?;
        let k4 = f(t + C4 * h, y + h * (A41 * k1 + A42 * k2 + A43 * k3))?;
        let k5 = f(
            t + C5 * h,
            y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4),
        )?;
        let k6 = f(
            t + h,
            y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5),
        )?;
        let y_new = y + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6);
        let t_new = if last { t_end } else { t + h };
        let k7 = f(t_new, y_new)?;
        let err_abs = (h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)).abs();
        let scale = tol.abs_tol + tol.rel_tol * y.abs().max(y_new.abs());
        let err = err_abs / scale;

        if err <= 1.0 {
            t = t_new;
            y = y_new;
            k1 = k7;
            traj.times.push(t);
            traj.values.push(y);
            traj.slopes.push(k1);
            let err = err.max(1e-10);
            let mut fac = SAFETY * err.powf(-ALPHA) * err_prev.powf(BETA);
            fac = fac.clamp(0.2, 5.0);
            if rejected_last {
                fac = fac.min(1.0);
            }
            err_prev = err;
            rejected_last = false;
            h = (h * fac).min(max_step);
        } else {
            let fac = (SAFETY * err.powf(-0.2)).max(0.1);
            h *= fac;
            rejected_last = true;
        }
    }
    traj.rhs_evals = evals;
    Ok(traj)
}

/// Solves `u' = f(u/eps, t/eps, u, t)`, `u(0) = u0` on `[0, t_end]` with steps capped at `eps/10`.
pub fn solve_oscillatory(
    field: &ProblemField,
    epsilon: f64,
    u0: f64,
    t_end: f64,
    tol: ToleranceSpec,
) -> Result<Trajectory, IntegrationError> {
    if !(epsilon > 0.0) {
        return Err(IntegrationError::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let (lo, hi) = field.u_box;
    if !(u0 > lo && u0 < hi) {
        log::warn!("initial value {u0} lies outside the interior of u_box [{lo}, {hi}]; declared bounds may not hold");
    }
    let inv = 1.0 / epsilon;
    integrate(
        |t, u| field.evaluate(u * inv, t * inv, u, t),
        0.0,
        u0,
        t_end,
        epsilon / 10.0,
        tol,
        Some(epsilon),
    )
}

/// Solves the frozen cell problem `v' = f(v, tau, u_frozen, t_frozen)`, `v(0) = v0`.
///
/// The cell variable drifts without bound while the dynamics only see it
/// modulo 1, so the step error is controlled absolutely: `rel_tol` is ignored
/// and recorded as zero.
pub fn solve_cell(
    field: &ProblemField,
    u_frozen: f64,
    t_frozen: f64,
    v0: f64,
    tau_end: f64,
    tol: ToleranceSpec,
) -> Result<Trajectory, IntegrationError> {
    let abs_only = ToleranceSpec::new(0.0, tol.abs_tol);
    integrate(
        |tau, v| field.evaluate(v, tau, u_frozen, t_frozen),
        0.0,
        v0,
        tau_end,
        CELL_MAX_STEP,
        abs_only,
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::builtin;

    #[test]
    fn constant_field_is_exact() {
        let f = builtin("constant", &[2.0]).unwrap();
        let tr = solve_oscillatory(&f, 0.1, 1.0, 3.0, ToleranceSpec::default()).unwrap();
        assert!((tr.end_value() - 7.0).abs() < 1e-10);
        assert_eq!(tr.end_time(), 3.0);
        assert!(tr.times().windows(2).all(|w| w[1] > w[0]));
        assert!(tr
            .times()
            .windows(2)
            .all(|w| w[1] - w[0] <= 0.01 * (1.0 + 1e-12)));
        assert!((tr.value_at(1.2345) - (1.0 + 2.0 * 1.2345)).abs() < 1e-10);
    }

    #[test]
    fn example3_closed_form() {
        // u(t) = (eps/2)(1 - exp(-t/eps)) - t
        let f = builtin("example3", &[]).unwrap();
        let eps = 1e-3;
        let tr = solve_oscillatory(&f, eps, 0.0, 0.01, ToleranceSpec::default()).unwrap();
        let exact = |t: f64| 0.5 * eps * (1.0 - (-t / eps).exp()) - t;
        assert!((exact(0.01) - (-9.500_022_699_964_88e-3)).abs() < 1e-15);
        assert!((tr.end_value() - exact(0.01)).abs() < 1e-9);
        for i in 0..=100 {
            let t = 0.01 * i as f64 / 100.0;
            assert!((tr.value_at(t) - exact(t)).abs() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn example1_respects_speed_bracket() {
        let f = builtin("example1", &[]).unwrap();
        let tr = solve_oscillatory(&f, 1e-2, 2.0, 1.0, ToleranceSpec::default()).unwrap();
        for (t, u) in tr.samples() {
            assert!(u >= 2.0 - 5.0 * t - 1e-12 && u <= 2.0 + 5.0 * t + 1e-12);
        }
        for w in tr.times().windows(2).zip(tr.values().windows(2)) {
            let (ts, us) = w;
            let bound = f.beta * (ts[1] - ts[0]) * (1.0 + 10.0 * tr.rel_tol);
            assert!((us[1] - us[0]).abs() <= bound);
        }
    }

    #[test]
    fn cell_problem_example3_pins_companion_variable() {
        let f = builtin("example3", &[]).unwrap();
        let tr = solve_cell(&f, 0.0, 0.0, 0.0, 100.0, ToleranceSpec::default()).unwrap();
        let v = tr.end_value();
        assert!((-99.6..=-99.4).contains(&v), "v(100) = {v}");
        assert!(tr
            .times()
            .windows(2)
            .all(|w| w[1] - w[0] <= CELL_MAX_STEP * (1.0 + 1e-12)));
        assert_eq!(tr.rel_tol, 0.0);
        assert!(tr.epsilon.is_none());
    }

    #[test]
    fn cell_problem_constant_drift() {
        let f = builtin("constant", &[-0.7]).unwrap();
        let tr = solve_cell(&f, 3.0, 1.0, 0.25, 40.0, ToleranceSpec::default()).unwrap();
        assert!((tr.end_value() - (0.25 - 0.7 * 40.0)).abs() < 1e-11);
    }

    #[test]
    fn cell_problem_example1_average_speed() {
        let f = builtin("example1", &[]).unwrap();
        let tr = solve_cell(&f, 2.0, 0.0, 0.0, 2000.0, ToleranceSpec::default()).unwrap();
        // |v(T) - lambda T| <= xi with xi = 11
        let lambda = -(3.0f64).sqrt();
        assert!((tr.end_value() - lambda * 2000.0).abs() <= 11.0);
        assert!((tr.end_value() / 2000.0 - lambda).abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_arguments() {
        let f = builtin("example1", &[]).unwrap();
        let tol = ToleranceSpec::default();
        assert!(matches!(
            solve_oscillatory(&f, 0.0, 0.0, 1.0, tol),
            Err(IntegrationError::InvalidArgument(_))
        ));
        assert!(matches!(
            solve_oscillatory(&f, 0.1, 0.0, -1.0, tol),
            Err(IntegrationError::InvalidArgument(_))
        ));
        assert!(matches!(
            solve_oscillatory(&f, 0.1, 0.0, 1.0, ToleranceSpec::new(1e-9, 0.0)),
            Err(IntegrationError::InvalidArgument(_))
        ));
    }

    #[test]
    fn non_finite_rhs_is_an_error() {
        let r = integrate(
            |t, _| if t > 0.5 { f64::NAN } else { 1.0 },
            0.0,
            0.0,
            1.0,
            0.1,
            ToleranceSpec::default(),
            None,
        );
        assert!(matches!(r, Err(IntegrationError::NonFiniteRhs { .. })));
    }

    #[test]
    fn discontinuous_rhs_underflows() {
        // A sign switch across y = 0 forces chattering steps that the controller cannot resolve.
        let r = integrate(
            |_, y| if y > 0.0 { -1.0 } else { 1.0 } * 1e20,
            0.0,
            1e-30,
            1.0,
            0.1,
            ToleranceSpec::new(0.0, 1e-12),
            None,
        );
        assert!(
            matches!(r, Err(IntegrationError::StepUnderflow { .. })),
            "{r:?}"
        );
    }

    #[test]
    fn hermite_reproduces_cubic_nodes() {
        let tr = integrate(
            |t, _| 3.0 * t * t,
            0.0,
            0.0,
            2.0,
            0.3,
            ToleranceSpec::default(),
            None,
        )
        .unwrap();
        for i in 0..=40 {
            let t = 2.0 * i as f64 / 40.0;
            assert!((tr.value_at(t) - t * t * t).abs() < 1e-9);
        }
    }
}
