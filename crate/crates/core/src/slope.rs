//! Effective slope `fbar(u, t)`: the long-time average speed of the frozen
//! cell problem `v' = f(v, tau, u, t)`.
//!
//! Three estimators are provided:
//!
//! * **trajectory**: `v(T)/T` from `v(0) = 0`. Every solution satisfies
//!   `|v(s) - v(s') - lambda (s - s')| <= xi` with `xi = 1 + 2 beta`, so the
//!   estimate is certified to within `xi / T` plus integrator slack.
//! * **quadrature**: for `tau`-independent fields without zeros in `v`, the
//!   cell problem is autonomous and the slope is the harmonic mean
//!   `(int_0^1 dv / f)^-1`.
//! * **window**: min/max of `(v(s + W) - v(s)) / W` over sampled `s`, an
//!   inner bracket of the sup/inf definition of the slope.

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::field::{Builtin, ProblemField};
use crate::integrator::{solve_cell, IntegrationError, ToleranceSpec, Trajectory};
use crate::quadrature;

pub const DEFAULT_HORIZON: f64 = 1e4;
pub const DEFAULT_QUAD_TOL: f64 = 1e-12;
pub const DEFAULT_QUAD_FLOOR: f64 = 1e-8;
const SIGN_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlopeMethod {
    Trajectory,
    Quadrature,
    Window,
    /// Closed-form slope of a built-in field.
    Analytic,
}

impl SlopeMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            SlopeMethod::Trajectory => "trajectory",
            SlopeMethod::Quadrature => "quadrature",
            SlopeMethod::Window => "window",
            SlopeMethod::Analytic => "analytic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeEstimate {
    pub value: f64,
    pub certified_radius: f64,
    /// Cell horizon used by the trajectory method.
    pub horizon: Option<f64>,
    pub method: SlopeMethod,
    pub xi: f64,
    pub certified: bool,
}

impl SlopeEstimate {
    pub fn contains(&self, x: f64) -> bool {
        (self.value - x).abs() <= self.certified_radius
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SlopeError {
    #[error("integrand changes sign or nearly vanishes (min |f| = {min_abs:e} at v = {at})")]
    NotSignDefinite { min_abs: f64, at: f64 },
    #[error("quadrature needs a tau-independent field")]
    NotTauIndependent,
    #[error("field evaluation is not finite at v = {v}")]
    NonFinite { v: f64 },
    #[error(transparent)]
    Integration(#[from] IntegrationError),
    #[error("invalid slope request: {0}")]
    InvalidArgument(String),
    #[error("({u}, {t}) lies outside the slope table")]
    OutsideTable { u: f64, t: f64 },
    #[error("no closed-form slope known for `{0}`")]
    NoClosedForm(String),
    #[error("{} table cell(s) failed; first at (u={}, t={}): {}", .0.len(), .0[0].0, .0[0].1, .0[0].2)]
    Table(Vec<(f64, f64, SlopeError)>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeOptions {
    pub horizon: f64,
    pub tol: ToleranceSpec,
    pub quad_tol: f64,
    pub quad_floor: f64,
}

impl Default for SlopeOptions {
    fn default() -> Self {
        SlopeOptions {
            horizon: DEFAULT_HORIZON,
            tol: ToleranceSpec::default(),
            quad_tol: DEFAULT_QUAD_TOL,
            quad_floor: DEFAULT_QUAD_FLOOR,
        }
    }
}

/// Integrator contribution to the trajectory radius: `10 tol (1 + T)` on
/// `v(T)`, hence divided by `T` on the slope.
pub fn integrator_slack(tol: ToleranceSpec, horizon: f64) -> f64 {
    10.0 * tol.abs_tol * (1.0 + horizon) / horizon
}

pub fn estimate_trajectory(
    field: &ProblemField,
    u: f64,
    t: f64,
    horizon: f64,
    tol: ToleranceSpec,
) -> Result<SlopeEstimate, SlopeError> {
    estimate_trajectory_from(field, u, t, 0.0, horizon, tol)
}

/// Trajectory estimate from an arbitrary cell initial value `v0`.
pub fn estimate_trajectory_from(
    field: &ProblemField,
    u: f64,
    t: f64,
    v0: f64,
    horizon: f64,
    tol: ToleranceSpec,
) -> Result<SlopeEstimate, SlopeError> {
    if !(horizon >= 10.0) {
        return Err(SlopeError::InvalidArgument(format!(
            "horizon must be >= 10, got {horizon}"
        )));
    }
    let traj = solve_cell(field, u, t, v0, horizon, tol)?;
    Ok(trajectory_estimate(field, &traj, tol))
}

fn trajectory_estimate(
    field: &ProblemField,
    traj: &Trajectory,
    tol: ToleranceSpec,
) -> SlopeEstimate {
    let horizon = traj.end_time() - traj.start_time();
    let xi = field.xi();
    SlopeEstimate {
        value: (traj.end_value() - traj.values()[0]) / horizon,
        certified_radius: xi / horizon + integrator_slack(tol, horizon),
        horizon: Some(horizon),
        method: SlopeMethod::Trajectory,
        xi,
        certified: field.is_certified(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowBracket {
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    pub windows: usize,
}

impl WindowBracket {
    pub fn width(&self) -> f64 {
        self.lambda_plus - self.lambda_minus
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lambda_minus <= x && x <= self.lambda_plus
    }
}

/// Scans `(v(s + window) - v(s)) / window` for `s = 0, stride, 2 stride, ...`
/// along one cell trajectory on `[0, total]`.
pub fn estimate_window(
    field: &ProblemField,
    u: f64,
    t: f64,
    total: f64,
    window: f64,
    stride: f64,
    tol: ToleranceSpec,
) -> Result<WindowBracket, SlopeError> {
    if !(window > 0.0 && window <= total / 2.0) {
        return Err(SlopeError::InvalidArgument(format!(
            "window must lie in (0, total/2], got window={window}, total={total}"
        )));
    }
    if !(stride > 0.0) {
        return Err(SlopeError::InvalidArgument(format!(
            "stride must be positive, got {stride}"
        )));
    }
    let traj = solve_cell(field, u, t, 0.0, total, tol)?;
    Ok(window_bracket(&traj, window, stride))
}

pub(crate) fn window_bracket(traj: &Trajectory, window: f64, stride: f64) -> WindowBracket {
    let end = traj.end_time();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut windows = 0;
    let mut k = 0usize;
    loop {
        let s = k as f64 * stride;
        if s + window > end {
            break;
        }
        let q = (traj.value_at(s + window) - traj.value_at(s)) / window;
        lo = lo.min(q);
        hi = hi.max(q);
        windows += 1;
        k += 1;
    }
    WindowBracket {
        lambda_minus: lo,
        lambda_plus: hi,
        windows,
    }
}

/// Harmonic-mean slope for `tau`-independent, sign-definite fields.
pub fn estimate_quadrature(
    field: &ProblemField,
    u: f64,
    t: f64,
    quad_tol: f64,
) -> Result<SlopeEstimate, SlopeError> {
    estimate_quadrature_with_floor(field, u, t, quad_tol, DEFAULT_QUAD_FLOOR)
}

pub fn estimate_quadrature_with_floor(
    field: &ProblemField,
    u: f64,
    t: f64,
    quad_tol: f64,
    quad_floor: f64,
) -> Result<SlopeEstimate, SlopeError> {
    if !field.flags.tau_independent {
        return Err(SlopeError::NotTauIndependent);
    }
    if !(quad_tol > 0.0) {
        return Err(SlopeError::InvalidArgument(format!(
            "quad_tol must be positive, got {quad_tol}"
        )));
    }
    let g = |v: f64| field.evaluate(v, 0.0, u, t);

    let n = SIGN_SAMPLES;
    let samples: Vec<f64> = (0..n).map(|i| g(i as f64 / n as f64)).collect();
    if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
        return Err(SlopeError::NonFinite {
            v: i as f64 / n as f64,
        });
    }
    let positive = samples[0] > 0.0;
    let (imin, min_sampled) = samples
        .iter()
        .map(|x| x.abs())
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty samples");
    if samples.iter().any(|&x| (x > 0.0) != positive || x == 0.0) {
        return Err(SlopeError::NotSignDefinite {
            min_abs: 0.0,
            at: imin as f64 / n as f64,
        });
    }
    let h = 1.0 / n as f64;
    let center = imin as f64 * h;
    let (at, min_abs) = quadrature::golden_min(|v| g(v).abs(), center - h, center + h, 100);
    let (at, min_abs) = if min_abs < min_sampled {
        (at, min_abs)
    } else {
        (center, min_sampled)
    };
    if min_abs <= quad_floor {
        return Err(SlopeError::NotSignDefinite {
            min_abs,
            at: at.rem_euclid(1.0),
        });
    }

    // Break the interval at sampled local minima of |f|, where 1/f peaks.
    let mut minima: Vec<(f64, f64)> = (0..n)
        .filter(|&i| {
            let a = samples[i].abs();
            a <= samples[(i + n - 1) % n].abs() && a <= samples[(i + 1) % n].abs()
        })
        .map(|i| (samples[i].abs(), i as f64 * h))
        .collect();
    minima.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut breaks: Vec<f64> = minima.iter().take(64).map(|m| m.1).collect();
    breaks.push(at.rem_euclid(1.0));
    breaks.extend([0.0, 1.0]);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    // Target |dI| <= quad_tol * I^2 so that |d(1/I)| <= quad_tol; I estimated by the periodic trapezoid rule.
    let trapezoid = samples.iter().map(|x| 1.0 / x).sum::<f64>() * h;
    let abs_tol = quad_tol * trapezoid * trapezoid;
    let r = quadrature::integrate(|v| 1.0 / g(v), &breaks, abs_tol, 50_000);
    if !r.value.is_finite() {
        return Err(SlopeError::NonFinite { v: at });
    }
    let mag = r.value.abs();
    let radius = if r.error < mag {
        r.error / (mag * (mag - r.error))
    } else {
        f64::INFINITY
    };
    Ok(SlopeEstimate {
        value: 1.0 / r.value,
        certified_radius: radius,
        horizon: None,
        method: SlopeMethod::Quadrature,
        xi: field.xi(),
        certified: field.is_certified(),
    })
}

/// Quadrature when admissible, otherwise the trajectory method.
pub fn estimate_best(
    field: &ProblemField,
    u: f64,
    t: f64,
    opts: &SlopeOptions,
) -> Result<SlopeEstimate, SlopeError> {
    if field.flags.tau_independent {
        match estimate_quadrature_with_floor(field, u, t, opts.quad_tol, opts.quad_floor) {
            Err(SlopeError::NotSignDefinite { .. }) => {}
            other => return other,
        }
    }
    estimate_trajectory(field, u, t, opts.horizon, opts.tol)
}

/// Slope of `s -> -a + cos(2 pi s)`-type cells: `-sign(a) sqrt(a^2 - 1)` for
/// `|a| > 1`, pinned (zero) otherwise.
fn cosine_cell_slope(a: f64) -> f64 {
    if a.abs() > 1.0 {
        -a.signum() * (a * a - 1.0).sqrt()
    } else {
        0.0
    }
}

/// Closed-form effective slope, when one is known.
pub fn closed_form_slope(field: &ProblemField, u: f64, _t: f64) -> Option<f64> {
    let offset = field.offset();
    match field.builtin()? {
        Builtin::Constant(c) => Some(c + offset),
        Builtin::Example1 => Some(cosine_cell_slope(u - offset)),
        Builtin::ShiftedCosine(a) => Some(cosine_cell_slope(a - offset)),
        // w = v + tau solves w' = g(w) and is pinned at w = 1/2.
        Builtin::Example3 if offset == 0.0 => Some(-1.0),
        _ => None,
    }
}

/// Anything that can answer `fbar(u, t)`.
pub trait SlopeSource: Sync {
    fn slope(&self, u: f64, t: f64) -> Result<SlopeEstimate, SlopeError>;
}

/// Fresh estimate at each query.
#[derive(Debug, Clone)]
pub struct DirectSlope<'a> {
    pub field: &'a ProblemField,
    pub opts: SlopeOptions,
}

impl SlopeSource for DirectSlope<'_> {
    fn slope(&self, u: f64, t: f64) -> Result<SlopeEstimate, SlopeError> {
        estimate_best(self.field, u, t, &self.opts)
    }
}

/// Closed-form slopes of built-in fields.
#[derive(Debug, Clone)]
pub struct ExactSlope<'a> {
    pub field: &'a ProblemField,
}

impl ExactSlope<'_> {
    pub fn available(field: &ProblemField) -> bool {
        closed_form_slope(field, 0.0, 0.0).is_some()
    }
}

impl SlopeSource for ExactSlope<'_> {
    fn slope(&self, u: f64, t: f64) -> Result<SlopeEstimate, SlopeError> {
        let value = closed_form_slope(self.field, u, t)
            .ok_or_else(|| SlopeError::NoClosedForm(self.field.label()))?;
        Ok(SlopeEstimate {
            value,
            certified_radius: 0.0,
            horizon: None,
            method: SlopeMethod::Analytic,
            xi: self.field.xi(),
            certified: true,
        })
    }
}

/// Slopes on a rectangular `(u, t)` grid with bilinear interpolation.
#[derive(Debug, Clone)]
pub struct SlopeTable {
    u_grid: Vec<f64>,
    t_grid: Vec<f64>,
    /// Row-major: index `i * t_grid.len() + j` for `(u_grid[i], t_grid[j])`.
    values: Vec<SlopeEstimate>,
    u_independent: bool,
    t_independent: bool,
}

fn strictly_increasing(grid: &[f64]) -> bool {
    !grid.is_empty() && grid.iter().all(|x| x.is_finite()) && grid.windows(2).all(|w| w[1] > w[0])
}

/// `n` evenly spaced points from `lo` to `hi` inclusive (`n >= 2`), or `[lo]` when `n == 1`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// Fills a slope table, using quadrature where admissible and the
/// trajectory method elsewhere. Cells are estimated in parallel; axes the
/// field does not depend on are computed once and replicated.
pub fn effective_field(
    field: &ProblemField,
    u_grid: &[f64],
    t_grid: &[f64],
    opts: &SlopeOptions,
) -> Result<SlopeTable, SlopeError> {
    if !strictly_increasing(u_grid) || !strictly_increasing(t_grid) {
        return Err(SlopeError::InvalidArgument(
            "grids must be non-empty, finite and strictly increasing".into(),
        ));
    }
    let nu_eff = if field.flags.u_independent {
        1
    } else {
        u_grid.len()
    };
    let nt_eff = if field.flags.t_independent {
        1
    } else {
        t_grid.len()
    };
    let cells: Vec<(usize, usize)> = (0..nu_eff)
        .flat_map(|i| (0..nt_eff).map(move |j| (i, j)))
        .collect();
    let results: Vec<Result<SlopeEstimate, SlopeError>> = cells
        .par_iter()
        .map(|&(i, j)| estimate_best(field, u_grid[i], t_grid[j], opts))
        .collect();
    let mut failures = Vec::new();
    let mut unique = Vec::with_capacity(results.len());
    for (&(i, j), r) in cells.iter().zip(results) {
        match r {
            Ok(e) => unique.push(e),
            Err(e) => failures.push((u_grid[i], t_grid[j], e)),
        }
    }
    if !failures.is_empty() {
        return Err(SlopeError::Table(failures));
    }
    let nt = t_grid.len();
    let values = (0..u_grid.len() * nt)
        .map(|k| {
            let (i, j) = (k / nt, k % nt);
            let i = if field.flags.u_independent { 0 } else { i };
            let j = if field.flags.t_independent { 0 } else { j };
            unique[i * nt_eff + j]
        })
        .collect();
    Ok(SlopeTable {
        u_grid: u_grid.to_vec(),
        t_grid: t_grid.to_vec(),
        values,
        u_independent: field.flags.u_independent,
        t_independent: field.flags.t_independent,
    })
}

/// Locates `x` in `grid`: returns the lower index and the fractional position.
fn locate(grid: &[f64], x: f64, independent: bool) -> Option<(usize, f64)> {
    let n = grid.len();
    if n == 1 {
        return (independent || x == grid[0]).then_some((0, 0.0));
    }
    if x < grid[0] || x > grid[n - 1] || x.is_nan() {
        return independent.then(|| if x < grid[0] { (0, 0.0) } else { (n - 2, 1.0) });
    }
    let i = (grid.partition_point(|&g| g <= x).max(1) - 1).min(n - 2);
    Some((i, (x - grid[i]) / (grid[i + 1] - grid[i])))
}

impl SlopeTable {
    pub fn u_grid(&self) -> &[f64] {
        &self.u_grid
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    pub fn at(&self, i: usize, j: usize) -> &SlopeEstimate {
        &self.values[i * self.t_grid.len() + j]
    }

    pub fn entries(&self) -> impl Iterator<Item = (f64, f64, &SlopeEstimate)> + '_ {
        let nt = self.t_grid.len();
        self.values
            .iter()
            .enumerate()
            .map(move |(k, e)| (self.u_grid[k / nt], self.t_grid[k % nt], e))
    }

    pub fn max_radius(&self) -> f64 {
        self.values
            .iter()
            .map(|e| e.certified_radius)
            .fold(0.0, f64::max)
    }

    pub fn covers(&self, u: f64, t: f64) -> bool {
        locate(&self.u_grid, u, self.u_independent).is_some()
            && locate(&self.t_grid, t, self.t_independent).is_some()
    }

    /// Largest excess of `fbar(u_{i+1}, t) - fbar(u_i, t)` over the two radii; `<= 0` when monotone.
    pub fn monotonicity_excess(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for j in 0..self.t_grid.len() {
            for i in 0..self.u_grid.len().saturating_sub(1) {
                let (a, b) = (self.at(i, j), self.at(i + 1, j));
                worst = worst.max(b.value - a.value - a.certified_radius - b.certified_radius);
            }
        }
        worst
    }

    /// Writes `u,t,lambda,radius,method` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["u", "t", "lambda", "radius", "method"])?;
        for (u, t, e) in self.entries() {
            w.write_record([
                u.to_string(),
                t.to_string(),
                e.value.to_string(),
                e.certified_radius.to_string(),
                e.method.as_str().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl SlopeSource for SlopeTable {
    /// Bilinear value; the radius is the largest radius among the four corners.
    fn slope(&self, u: f64, t: f64) -> Result<SlopeEstimate, SlopeError> {
        let (i, a) =
            locate(&self.u_grid, u, self.u_independent).ok_or(SlopeError::OutsideTable { u, t })?;
        let (j, b) =
            locate(&self.t_grid, t, self.t_independent).ok_or(SlopeError::OutsideTable { u, t })?;
        let i1 = (i + 1).min(self.u_grid.len() - 1);
        let j1 = (j + 1).min(self.t_grid.len() - 1);
        let corners = [
            self.at(i, j),
            self.at(i1, j),
            self.at(i, j1),
            self.at(i1, j1),
        ];
        let weights = [(1.0 - a) * (1.0 - b), a * (1.0 - b), (1.0 - a) * b, a * b];
        let value = corners.iter().zip(weights).map(|(c, w)| w * c.value).sum();
        let radius = corners
            .iter()
            .map(|c| c.certified_radius)
            .fold(0.0, f64::max);
        let first = corners[0];
        Ok(SlopeEstimate {
            value,
            certified_radius: radius,
            horizon: first.horizon,
            method: first.method,
            xi: first.xi,
            certified: corners.iter().all(|c| c.certified),
        })
    }
}
