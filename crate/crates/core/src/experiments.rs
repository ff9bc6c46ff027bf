//! Convergence-rate, sharpness and stability experiments.

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::field::{builtin, ProblemField};
use crate::homogenize::{
    analytic_solution, reference_solution, run_scheme, HomogenizeError, HomogenizedPath,
};
use crate::integrator::{integrate, solve_oscillatory, IntegrationError, ToleranceSpec};
use crate::slope::{
    effective_field, estimate_best, linspace, ExactSlope, SlopeError, SlopeOptions, SlopeSource,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error("T = {t_final} < C eps |log eps| for eps in {offending:?}")]
    Precondition { t_final: f64, offending: Vec<f64> },
    #[error("invalid experiment parameter: {0}")]
    InvalidArgument(String),
    #[error("eps = {epsilon}: {source}")]
    Integration {
        epsilon: f64,
        source: IntegrationError,
    },
    #[error(transparent)]
    Homogenize(#[from] HomogenizeError),
    #[error(transparent)]
    Slope(#[from] SlopeError),
}

/// `eps |log eps|`
pub fn log_scale(epsilon: f64) -> f64 {
    epsilon * epsilon.ln().abs()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateOptions {
    /// Constant in `T >= C eps |log eps|` and `dt = C eps |log eps|`.
    pub c: f64,
    pub tol: ToleranceSpec,
    /// Uniform sample times for the sup norm (breakpoints are added).
    pub samples: usize,
    pub slope: SlopeOptions,
    /// Slope-table resolution for fields without a closed-form slope.
    pub table_u_points: usize,
    pub table_t_points: usize,
}

impl Default for RateOptions {
    fn default() -> Self {
        RateOptions {
            c: 1.0,
            tol: ToleranceSpec::default(),
            samples: 1000,
            slope: SlopeOptions::default(),
            table_u_points: 101,
            table_t_points: 11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRow {
    pub epsilon: f64,
    pub t_final: f64,
    /// `sup |u_eps - u0|` over the sample grid.
    pub sup_error: f64,
    /// `sup_error |log eps| / T`
    pub product: f64,
    /// Step of the scheme run at `C eps |log eps|`.
    pub dt_used: f64,
    /// `sup |v - u0|` over the breakpoints of that scheme run.
    pub scheme_error: f64,
    /// Sampling slack `2 beta T / samples` plus propagated slope radii.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    /// Sorted by descending `eps`.
    pub rows: Vec<ErrorRow>,
    /// Largest product over the rows.
    pub fitted_c: f64,
    pub analytic_reference: bool,
}

impl ErrorReport {
    /// Largest ratio of consecutive products (smaller `eps` over larger).
    pub fn max_product_growth(&self) -> f64 {
        self.rows
            .windows(2)
            .map(|w| w[1].product / w[0].product)
            .fold(0.0, f64::max)
    }

    /// Writes `epsilon,T,sup_error,product,dt_used,scheme_error,slack`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "epsilon",
            "T",
            "sup_error",
            "product",
            "dt_used",
            "scheme_error",
            "slack",
        ])?;
        for r in &self.rows {
            w.write_record(
                [
                    r.epsilon,
                    r.t_final,
                    r.sup_error,
                    r.product,
                    r.dt_used,
                    r.scheme_error,
                    r.slack,
                ]
                .map(|x| x.to_string()),
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Measures `||u_eps - u0||` on `[0, T]` for each `eps`.
///
/// `u0` is the closed form when one exists, otherwise the scheme at step
/// `min dt / 8` backed by a slope table over the reachable band.
pub fn rate_experiment(
    field: &ProblemField,
    u0: f64,
    t_final: f64,
    eps_list: &[f64],
    opts: &RateOptions,
) -> Result<ErrorReport, ExperimentError> {
    if !(t_final > 0.0) {
        return Err(ExperimentError::InvalidArgument(format!(
            "T must be positive, got {t_final}"
        )));
    }
    if eps_list.is_empty() || eps_list.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(ExperimentError::InvalidArgument(
            "eps values must lie in (0, 1)".into(),
        ));
    }
    if !(opts.c > 0.0) || opts.samples == 0 {
        return Err(ExperimentError::InvalidArgument(
            "C and samples must be positive".into(),
        ));
    }
    let offending: Vec<f64> = eps_list
        .iter()
        .copied()
        .filter(|&e| t_final < opts.c * log_scale(e))
        .collect();
    if !offending.is_empty() {
        return Err(ExperimentError::Precondition { t_final, offending });
    }
    let mut eps: Vec<f64> = eps_list.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));

    let analytic = analytic_solution(field, u0);
    let exact = ExactSlope { field };
    let table;
    let source: &dyn SlopeSource = if ExactSlope::available(field) {
        &exact
    } else {
        let reach = field.beta * t_final;
        let u_grid = linspace(u0 - reach, u0 + reach, opts.table_u_points.max(2));
        let t_grid = linspace(0.0, t_final, opts.table_t_points.max(2));
        table = effective_field(field, &u_grid, &t_grid, &opts.slope)?;
        &table
    };
    let reference = match analytic {
        Some(_) => None,
        None => {
            let dt_min = (opts.c * log_scale(*eps.last().expect("non-empty"))).min(t_final);
            Some(reference_solution(
                field,
                u0,
                t_final,
                dt_min / 8.0,
                dt_min,
                source,
            )?)
        }
    };
    let u_ref = |t: f64| match (&analytic, &reference) {
        (Some(a), _) => a.value_at(t),
        (None, Some(p)) => p.value_at(t),
        (None, None) => unreachable!("either a closed form or a reference path"),
    };
    let ref_radius = reference
        .as_ref()
        .map_or(0.0, HomogenizedPath::propagated_radius);

    let rows: Result<Vec<ErrorRow>, ExperimentError> = eps
        .par_iter()
        .map(|&epsilon| {
            let traj = solve_oscillatory(field, epsilon, u0, t_final, opts.tol)
                .map_err(|source| ExperimentError::Integration { epsilon, source })?;
            let dt = (opts.c * log_scale(epsilon)).min(t_final);
            let steps = (t_final / dt).ceil() as usize;
            let scheme = run_scheme(u0, t_final / steps as f64, steps, source)?;

            let mut sup_error: f64 = 0.0;
            let mut probe = |t: f64| sup_error = sup_error.max((traj.value_at(t) - u_ref(t)).abs());
            (0..=opts.samples).for_each(|i| probe(t_final * i as f64 / opts.samples as f64));
            scheme
                .breakpoints()
                .iter()
                .for_each(|&(t, _)| probe(t.min(t_final)));
            if let Some(p) = &reference {
                p.breakpoints().iter().for_each(|&(t, _)| probe(t));
            }
            let scheme_error = scheme
                .breakpoints()
                .iter()
                .map(|&(t, v)| (v - u_ref(t)).abs())
                .fold(0.0, f64::max);
            Ok(ErrorRow {
                epsilon,
                t_final,
                sup_error,
                product: sup_error * epsilon.ln().abs() / t_final,
                dt_used: scheme.dt,
                scheme_error,
                slack: 2.0 * field.beta * t_final / opts.samples as f64 + ref_radius,
            })
        })
        .collect();
    let rows = rows?;
    let fitted_c = rows.iter().map(|r| r.product).fold(0.0, f64::max);
    Ok(ErrorReport {
        rows,
        fitted_c,
        analytic_reference: analytic.is_some(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharpnessRow {
    pub epsilon: f64,
    /// `delta eps |log eps|`
    pub t: f64,
    /// `u_eps(t) - u0(t)`
    pub gap: f64,
    /// `t / (2 delta |log eps|)`
    pub predicted: f64,
    pub ratio: f64,
}

/// Tolerance used by the sharpness experiment; the gap is of order `eps`
/// and must be resolved to a relative accuracy well below `eps`.
pub const SHARPNESS_TOL: ToleranceSpec = ToleranceSpec {
    rel_tol: 1e-12,
    abs_tol: 1e-15,
};

/// Gap between `u_eps` and `u0(t) = -t` for the sawtooth field at `t = delta eps |log eps|`.
pub fn sharpness_experiment(
    delta: f64,
    eps_list: &[f64],
    tol: ToleranceSpec,
) -> Result<Vec<SharpnessRow>, ExperimentError> {
    if !(delta > 0.0) {
        return Err(ExperimentError::InvalidArgument(format!(
            "delta must be positive, got {delta}"
        )));
    }
    if eps_list.iter().any(|&e| !(e > 0.0 && e < (-1.0f64).exp())) {
        return Err(ExperimentError::InvalidArgument(
            "eps values must lie in (0, 1/e)".into(),
        ));
    }
    let field = builtin("example3", &[]).expect("built-in exists");
    eps_list
        .par_iter()
        .map(|&epsilon| {
            let t = delta * log_scale(epsilon);
            let inv = 1.0 / epsilon;
            let traj = integrate(
                |s, u| field.evaluate(u * inv, s * inv, u, s),
                0.0,
                0.0,
                t,
                epsilon / 10.0,
                tol,
                Some(epsilon),
            )
            .map_err(|source| ExperimentError::Integration { epsilon, source })?;
            let gap = traj.end_value() + t;
            let predicted = t / (2.0 * delta * epsilon.ln().abs());
            Ok(SharpnessRow {
                epsilon,
                t,
                gap,
                predicted,
                ratio: gap / predicted,
            })
        })
        .collect()
}

pub fn write_sharpness_csv<W: Write>(rows: &[SharpnessRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epsilon", "t", "gap", "predicted", "ratio"])?;
    for r in rows {
        w.write_record([r.epsilon, r.t, r.gap, r.predicted, r.ratio].map(|x| x.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityRow {
    /// Signed perturbation: the cell field is `g + gamma`.
    pub gamma: f64,
    pub lambda_gamma: f64,
    pub lambda_0: f64,
    /// `|lambda_gamma - lambda_0|`
    pub delta: f64,
    /// Sum of the two certified radii.
    pub slack: f64,
    /// `xi_bar / |log |gamma||`
    pub bound: f64,
}

impl StabilityRow {
    /// The bound holds for every slope pair consistent with the estimates.
    pub fn holds(&self) -> bool {
        self.delta + self.slack <= self.bound
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub rows: Vec<StabilityRow>,
    pub xi_bar: f64,
}

impl StabilityReport {
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "gamma",
            "lambda_gamma",
            "lambda_0",
            "abs_delta",
            "slack",
            "bound",
        ])?;
        for r in &self.rows {
            w.write_record(
                [
                    r.gamma,
                    r.lambda_gamma,
                    r.lambda_0,
                    r.delta,
                    r.slack,
                    r.bound,
                ]
                .map(|x| x.to_string()),
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Slope of the cell field `g = f(., ., u, t)` against `g + gamma` and
/// `g - gamma` for each `gamma`. The bound uses the unperturbed `xi_bar`.
pub fn stability_experiment(
    field: &ProblemField,
    u: f64,
    t: f64,
    gammas: &[f64],
    opts: &SlopeOptions,
) -> Result<StabilityReport, ExperimentError> {
    if gammas.iter().any(|&g| !(g > 0.0 && g < 1.0)) {
        return Err(ExperimentError::InvalidArgument(
            "gamma values must lie in (0, 1)".into(),
        ));
    }
    let base = estimate_best(field, u, t, opts)?;
    let xi_bar = field.xi_bar();
    let signed: Vec<f64> = gammas.iter().flat_map(|&g| [g, -g]).collect();
    let rows: Result<Vec<StabilityRow>, SlopeError> = signed
        .par_iter()
        .map(|&gamma| {
            let e = estimate_best(&field.perturbed(gamma), u, t, opts)?;
            Ok(StabilityRow {
                gamma,
                lambda_gamma: e.value,
                lambda_0: base.value,
                delta: (e.value - base.value).abs(),
                slack: e.certified_radius + base.certified_radius,
                bound: xi_bar / gamma.abs().ln().abs(),
            })
        })
        .collect();
    Ok(StabilityReport {
        rows: rows?,
        xi_bar,
    })
}
