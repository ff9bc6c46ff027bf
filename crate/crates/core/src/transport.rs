//! Linear transport `V_t - f(x1/eps, x2/eps, x1, x2) V_{x1} + V_{x2} = 0`
//! and its homogenized limit, solved by backward characteristics.
//!
//! The characteristic through `(t, x)` has `X2(tau) = x2 - tau` exactly, so
//! only the first component is integrated:
//! `X1' = f(X1/eps, (x2 - tau)/eps, X1, x2 - tau)` with `X1(0) = x1`, and
//! `V(t, x) = V0(X1(t), x2 - t)`. The homogenized problem uses
//! `X1' = fbar(X1, x2 - tau)` instead, integrated by forward Euler.

use std::io::Write;

use ndarray::Array3;
use rayon::prelude::*;
use thiserror::Error;

use crate::expr::{self, EvalError, Expr, ParseError};
use crate::field::ProblemField;
use crate::integrator::{integrate, IntegrationError, ToleranceSpec, Trajectory};
use crate::slope::{effective_field, linspace, SlopeError, SlopeOptions, SlopeSource, SlopeTable};

/// Variables of the initial datum `V0`.
pub const INITIAL_VARIABLES: [&str; 2] = ["x1", "x2"];
/// Euler step cap of the homogenized characteristics.
pub const HOM_MAX_STEP: f64 = 1e-3;
pub const DEFAULT_TABLE_POINTS: usize = 41;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("invalid transport problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("initial datum failed at (x1={x1}, x2={x2}): {source}")]
    InitialData { x1: f64, x2: f64, source: EvalError },
    #[error("characteristic from (x1={x1}, x2={x2}) failed: {source}")]
    Integration {
        x1: f64,
        x2: f64,
        source: IntegrationError,
    },
    #[error("slope source does not cover (u={u}, t={t}): {source}")]
    Coverage { u: f64, t: f64, source: SlopeError },
    #[error(transparent)]
    Table(#[from] SlopeError),
    #[error("{count} grid point(s) failed; first: {first}")]
    Points {
        count: usize,
        first: Box<TransportError>,
    },
}

pub fn parse_initial(source: &str) -> Result<Expr, ParseError> {
    let names: Vec<String> = INITIAL_VARIABLES.iter().map(|s| s.to_string()).collect();
    expr::parse(source, &names)
}

#[derive(Debug, Clone)]
pub struct TransportProblem {
    pub field: ProblemField,
    pub v0: Expr,
    pub lip_v0: f64,
    pub x1_grid: Vec<f64>,
    pub x2_grid: Vec<f64>,
    /// Non-negative, strictly increasing sample times.
    pub times: Vec<f64>,
    pub epsilon: f64,
    pub tol: ToleranceSpec,
}

fn increasing(grid: &[f64]) -> bool {
    !grid.is_empty() && grid.iter().all(|x| x.is_finite()) && grid.windows(2).all(|w| w[1] > w[0])
}

impl TransportProblem {
    #[allow(clippy::too_many_arguments)]
    /// Checks the grids and that `lip_v0` dominates the difference quotients of `V0` on the lattice.
    pub fn new(
        field: ProblemField,
        v0: Expr,
        lip_v0: f64,
        x1_grid: Vec<f64>,
        x2_grid: Vec<f64>,
        times: Vec<f64>,
        epsilon: f64,
        tol: ToleranceSpec,
    ) -> Result<Self, TransportError> {
        if !increasing(&x1_grid) || !increasing(&x2_grid) {
            return Err(TransportError::InvalidProblem(
                "grids must be strictly increasing".into(),
            ));
        }
        if !increasing(&times) || times[0] < 0.0 {
            return Err(TransportError::InvalidProblem(
                "times must be non-negative and strictly increasing".into(),
            ));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(TransportError::InvalidProblem(format!(
                "epsilon must lie in (0, 1), got {epsilon}"
            )));
        }
        if !(lip_v0 >= 0.0 && lip_v0.is_finite()) {
            return Err(TransportError::InvalidProblem(format!(
                "lip_v0 must be finite and >= 0, got {lip_v0}"
            )));
        }
        let problem = TransportProblem {
            field,
            v0,
            lip_v0,
            x1_grid,
            x2_grid,
            times,
            epsilon,
            tol,
        };
        let sampled = problem.sampled_lip_v0()?;
        if sampled > lip_v0 * (1.0 + 1e-9) + 1e-12 {
            return Err(TransportError::InvalidProblem(format!(
                "declared lip_v0 = {lip_v0} is below the sampled quotient {sampled}"
            )));
        }
        Ok(problem)
    }

    pub fn initial(&self, x1: f64, x2: f64) -> Result<f64, TransportError> {
        self.v0
            .eval_slots(&[x1, x2])
            .map_err(|source| TransportError::InitialData { x1, x2, source })
    }

    /// Largest axis-wise difference quotient of `V0` between lattice neighbours.
    pub fn sampled_lip_v0(&self) -> Result<f64, TransportError> {
        let mut worst: f64 = 0.0;
        for (i, &a) in self.x1_grid.iter().enumerate() {
            for (j, &b) in self.x2_grid.iter().enumerate() {
                let here = self.initial(a, b)?;
                if let Some(&a1) = self.x1_grid.get(i + 1) {
                    worst = worst.max((self.initial(a1, b)? - here).abs() / (a1 - a));
                }
                if let Some(&b1) = self.x2_grid.get(j + 1) {
                    worst = worst.max((self.initial(a, b1)? - here).abs() / (b1 - b));
                }
            }
        }
        Ok(worst)
    }

    fn t_max(&self) -> f64 {
        *self.times.last().expect("times is non-empty")
    }

    /// Characteristics ignore `x2` when `f` depends on neither `tau` nor `t`.
    fn x2_blind(&self) -> bool {
        self.field.flags.tau_independent && self.field.flags.t_independent
    }
}

fn eps_path(
    problem: &TransportProblem,
    x1: f64,
    x2: f64,
    t_end: f64,
) -> Result<Trajectory, TransportError> {
    let f = &problem.field;
    let inv = 1.0 / problem.epsilon;
    integrate(
        |tau, x| {
            let s = x2 - tau;
            f.evaluate(x * inv, s * inv, x, s)
        },
        0.0,
        x1,
        t_end,
        problem.epsilon / 10.0,
        problem.tol,
        Some(problem.epsilon),
    )
    .map_err(|source| TransportError::Integration { x1, x2, source })
}

/// `X1_eps(t)` for the characteristic ending at `(t, x1, x2)`.
pub fn characteristic_eps(
    problem: &TransportProblem,
    x1: f64,
    x2: f64,
    t: f64,
) -> Result<f64, TransportError> {
    if !(t >= 0.0) {
        return Err(TransportError::InvalidProblem(format!(
            "t must be >= 0, got {t}"
        )));
    }
    if t == 0.0 {
        return Ok(x1);
    }
    Ok(eps_path(problem, x1, x2, t)?.end_value())
}

/// Forward Euler for `X' = fbar(X, x2 - tau)` landing exactly on each of
/// `times`; returns `(X, propagated radius)` per time.
fn hom_path(
    source: &dyn SlopeSource,
    x1: f64,
    x2: f64,
    times: &[f64],
) -> Result<Vec<(f64, f64)>, TransportError> {
    let first = times.iter().copied().find(|&t| t > 0.0);
    let dt = first.map_or(HOM_MAX_STEP, |t| HOM_MAX_STEP.min(t / 100.0));
    let mut out = Vec::with_capacity(times.len());
    let (mut x, mut tau, mut radius) = (x1, 0.0, 0.0);
    for &target in times {
        let n = ((target - tau) / dt).ceil() as usize;
        let h = if n > 0 {
            (target - tau) / n as f64
        } else {
            0.0
        };
        for _ in 0..n {
            let s = x2 - tau;
            let e = source
                .slope(x, s)
                .map_err(|source| TransportError::Coverage { u: x, t: s, source })?;
            x += e.value * h;
            radius += e.certified_radius * h;
            tau += h;
        }
        tau = target;
        out.push((x, radius));
    }
    Ok(out)
}

/// `X1_hom(t)` and its propagated slope radius.
pub fn characteristic_hom(
    source: &dyn SlopeSource,
    x1: f64,
    x2: f64,
    t: f64,
) -> Result<(f64, f64), TransportError> {
    if !(t >= 0.0) {
        return Err(TransportError::InvalidProblem(format!(
            "t must be >= 0, got {t}"
        )));
    }
    Ok(hom_path(source, x1, x2, &[t])?[0])
}

/// Slope table over the box reachable by homogenized characteristics:
/// `u` within `beta t_max` of the `x1` grid (or `u_range` when given), `t`
/// over `[min x2 - t_max, max x2]`. Axes the field ignores get one point.
pub fn transport_table(
    problem: &TransportProblem,
    u_range: Option<(f64, f64)>,
    u_points: usize,
    t_points: usize,
    opts: &SlopeOptions,
) -> Result<SlopeTable, TransportError> {
    let t_max = problem.t_max();
    let (lo, hi) = u_range.unwrap_or_else(|| {
        let reach = problem.field.beta * t_max;
        (
            problem.x1_grid[0] - reach,
            problem.x1_grid[problem.x1_grid.len() - 1] + reach,
        )
    });
    let flags = problem.field.flags;
    let u_grid = if flags.u_independent {
        vec![lo]
    } else {
        linspace(lo, hi, u_points.max(2))
    };
    let (s_lo, s_hi) = (
        problem.x2_grid[0] - t_max,
        problem.x2_grid[problem.x2_grid.len() - 1],
    );
    let t_grid = if flags.t_independent {
        vec![s_lo]
    } else {
        linspace(s_lo, s_hi, t_points.max(2))
    };
    Ok(effective_field(&problem.field, &u_grid, &t_grid, opts)?)
}

#[derive(Debug, Clone)]
pub struct TransportSolution {
    pub times: Vec<f64>,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    /// Indexed `[time, x1, x2]`.
    pub values_eps: Array3<f64>,
    pub values_hom: Array3<f64>,
    pub sup_error: f64,
    /// Largest propagated slope radius of a homogenized characteristic.
    pub char_radius: f64,
}

impl TransportSolution {
    /// Writes `t,x1,x2,V_eps,V_hom,abs_err`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x1", "x2", "V_eps", "V_hom", "abs_err"])?;
        for ((k, i, j), &ve) in self.values_eps.indexed_iter() {
            let vh = self.values_hom[[k, i, j]];
            w.write_record(
                [
                    self.times[k],
                    self.x1[i],
                    self.x2[j],
                    ve,
                    vh,
                    (ve - vh).abs(),
                ]
                .map(|x| x.to_string()),
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

struct PointResult {
    eps: Vec<f64>,
    hom: Vec<(f64, f64)>,
}

fn solve_point(
    problem: &TransportProblem,
    source: &dyn SlopeSource,
    x1: f64,
    x2: f64,
) -> Result<PointResult, TransportError> {
    let t_max = problem.t_max();
    let eps = if t_max > 0.0 {
        let path = eps_path(problem, x1, x2, t_max)?;
        problem.times.iter().map(|&t| path.value_at(t)).collect()
    } else {
        vec![x1; problem.times.len()]
    };
    let hom = hom_path(source, x1, x2, &problem.times)?;
    Ok(PointResult { eps, hom })
}

fn first_failure<T>(results: Vec<Result<T, TransportError>>) -> Result<Vec<T>, TransportError> {
    let count = results.iter().filter(|r| r.is_err()).count();
    if count == 0 {
        return results.into_iter().collect();
    }
    let first = results
        .into_iter()
        .find_map(Result::err)
        .expect("count > 0");
    Err(TransportError::Points {
        count,
        first: Box::new(first),
    })
}

/// `V_eps` and `V_hom` on the lattice at every sample time. One
/// characteristic per lattice point serves all times.
pub fn solve_transport(
    problem: &TransportProblem,
    source: &dyn SlopeSource,
) -> Result<TransportSolution, TransportError> {
    let (n1, n2, nt) = (
        problem.x1_grid.len(),
        problem.x2_grid.len(),
        problem.times.len(),
    );
    let columns = if problem.x2_blind() { 1 } else { n2 };
    let points: Vec<(usize, usize)> = (0..n1)
        .flat_map(|i| (0..columns).map(move |j| (i, j)))
        .collect();
    let results: Vec<Result<PointResult, TransportError>> = points
        .par_iter()
        .map(|&(i, j)| solve_point(problem, source, problem.x1_grid[i], problem.x2_grid[j]))
        .collect();
    let solved = first_failure(results)?;

    let mut values_eps = Array3::zeros((nt, n1, n2));
    let mut values_hom = Array3::zeros((nt, n1, n2));
    let mut sup_error: f64 = 0.0;
    let mut char_radius: f64 = 0.0;
    for i in 0..n1 {
        for j in 0..n2 {
            let r = &solved[i * columns + if columns == 1 { 0 } else { j }];
            let x2 = problem.x2_grid[j];
            for (k, &t) in problem.times.iter().enumerate() {
                let ve = problem.initial(r.eps[k], x2 - t)?;
                let vh = problem.initial(r.hom[k].0, x2 - t)?;
                values_eps[[k, i, j]] = ve;
                values_hom[[k, i, j]] = vh;
                sup_error = sup_error.max((ve - vh).abs());
                char_radius = char_radius.max(r.hom[k].1);
            }
        }
    }
    Ok(TransportSolution {
        times: problem.times.clone(),
        x1: problem.x1_grid.clone(),
        x2: problem.x2_grid.clone(),
        values_eps,
        values_hom,
        sup_error,
        char_radius,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzProbe {
    /// `max |Y(t, x1, x2 +- h) - Y(t, x1, x2)| / h` over the lattice and times (`-h` on the last column).
    pub max_x2_quotient: f64,
    /// Largest drop `Y(t, x1_i, x2) - Y(t, x1_{i+1}, x2)`; `<= 0` when `Y` is non-decreasing in `x1`.
    pub max_x1_decrease: f64,
    /// Largest propagated slope radius among the probed characteristics.
    pub char_radius: f64,
}

type PathPair = (Vec<(f64, f64)>, Vec<(f64, f64)>);

/// Difference quotients of the homogenized flow map `Y = X1_hom(t)`.
pub fn lipschitz_probe(
    problem: &TransportProblem,
    source: &dyn SlopeSource,
    h: f64,
) -> Result<LipschitzProbe, TransportError> {
    if !(h > 0.0) {
        return Err(TransportError::InvalidProblem(format!(
            "h must be positive, got {h}"
        )));
    }
    let (n1, n2) = (problem.x1_grid.len(), problem.x2_grid.len());
    let points: Vec<(usize, usize)> = (0..n1).flat_map(|i| (0..n2).map(move |j| (i, j))).collect();
    let results: Vec<Result<PathPair, TransportError>> = points
        .par_iter()
        .map(|&(i, j)| {
            let (x1, x2) = (problem.x1_grid[i], problem.x2_grid[j]);
            // The last column steps backwards so the probe stays inside a table built for the grid.
            let x2h = if j + 1 == n2 && n2 > 1 {
                x2 - h
            } else {
                x2 + h
            };
            Ok((
                hom_path(source, x1, x2, &problem.times)?,
                hom_path(source, x1, x2h, &problem.times)?,
            ))
        })
        .collect();
    let paths = first_failure(results)?;
    let mut probe = LipschitzProbe {
        max_x2_quotient: 0.0,
        max_x1_decrease: f64::NEG_INFINITY,
        char_radius: 0.0,
    };
    for (idx, (base, shifted)) in paths.iter().enumerate() {
        let (i, j) = points[idx];
        for k in 0..problem.times.len() {
            probe.max_x2_quotient = probe
                .max_x2_quotient
                .max((shifted[k].0 - base[k].0).abs() / h);
            probe.char_radius = probe.char_radius.max(base[k].1).max(shifted[k].1);
            if i + 1 < n1 {
                let next = &paths[(i + 1) * n2 + j].0;
                probe.max_x1_decrease = probe.max_x1_decrease.max(base[k].0 - next[k].0);
            }
        }
    }
    Ok(probe)
}
