//! `homlab`: command-line front end for the homogenization laboratory.
//!
//! Every command writes CSV to `--out`, or to stdout when `--out` is absent
//! (summary lines then go to stderr). Exit codes: 0 success, 1 error,
//! 2 when the computation succeeded but a checked inequality failed.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use homlab::experiments::{
    rate_experiment, sharpness_experiment, stability_experiment, write_sharpness_csv, RateOptions,
    SHARPNESS_TOL,
};
use homlab::field::{
    builtin_in_box, validate, DeclaredBounds, ProblemField, ValidateOptions, DEFAULT_U_BOX,
};
use homlab::homogenize::{analytic_solution, run_scheme};
use homlab::integrator::{solve_oscillatory, ToleranceSpec};
use homlab::slope::{
    closed_form_slope, effective_field, estimate_best, estimate_quadrature_with_floor,
    estimate_trajectory, estimate_window, linspace, DirectSlope, ExactSlope, SlopeEstimate,
    SlopeOptions, SlopeSource, SlopeTable,
};
use homlab::transport::{
    parse_initial, solve_transport, transport_table, TransportProblem, DEFAULT_TABLE_POINTS,
};

use config::{merge, ConfigFile};

#[derive(Parser, Debug)]
#[command(
    name = "homlab",
    version,
    about = "Periodic homogenization of oscillatory scalar ODEs and transport equations"
)]
struct Cli {
    /// JSON config file; flags override its values (see docs/config.md).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for the parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// CSV output file. Without it CSV goes to stdout and summaries to stderr.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a field and check periodicity, monotonicity and the declared bounds.
    #[command(allow_negative_numbers = true)]
    Validate(WithProblem<ValidateArgs>),
    /// Solve u' = f(u/eps, t/eps, u, t) with the adaptive integrator.
    #[command(name = "solve-eps", allow_negative_numbers = true)]
    SolveEps(WithProblem<SolveEpsArgs>),
    /// Estimate the effective slope at a point, or tabulate it on a grid.
    #[command(allow_negative_numbers = true)]
    Slope(WithProblem<SlopeArgs>),
    /// Run the explicit homogenized scheme.
    #[command(allow_negative_numbers = true)]
    Homogenize(WithProblem<HomogenizeArgs>),
    /// Measure sup |u_eps - u0| over an eps sweep.
    #[command(allow_negative_numbers = true)]
    Rate(WithProblem<RateArgs>),
    /// Gap of the sawtooth example at t = delta eps |log eps|.
    #[command(allow_negative_numbers = true)]
    Sharpness(WithTolerance<SharpnessArgs>),
    /// Slope change under f -> f +/- gamma against xi_bar / |log gamma|.
    #[command(allow_negative_numbers = true)]
    Stability(WithProblem<StabilityArgs>),
    /// Linear transport with oscillatory speed against its homogenized limit.
    #[command(allow_negative_numbers = true)]
    Transport(WithProblem<TransportArgs>),
}

#[derive(Args, Debug)]
struct WithProblem<T: Args> {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    tolerance: ToleranceArgs,
    #[command(flatten)]
    args: T,
}

#[derive(Args, Debug)]
struct WithTolerance<T: Args> {
    #[command(flatten)]
    tolerance: ToleranceArgs,
    #[command(flatten)]
    args: T,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemArgs {
    /// Built-in field: example1, example2, example3, constant (1 param), shifted_cosine (1 param).
    #[arg(long = "problem")]
    #[serde(rename = "name")]
    problem: Option<String>,
    /// Parameters of the built-in, comma separated.
    #[arg(long, value_delimiter = ',')]
    params: Option<Vec<f64>>,
    /// Field expression in v, tau, u, t; requires --alpha, --beta and --lipschitz.
    #[arg(long, allow_hyphen_values = true)]
    expr: Option<String>,
    /// Declared Lipschitz constant of f in all four variables.
    #[arg(long)]
    alpha: Option<f64>,
    /// Declared bound on |f|.
    #[arg(long)]
    beta: Option<f64>,
    /// Declared Lipschitz constant of f in v.
    #[arg(long)]
    lipschitz: Option<f64>,
    /// Box of u values on which the bounds hold, as lo,hi (default -4,4).
    #[arg(long = "u-box", value_delimiter = ',')]
    u_box: Option<Vec<f64>>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToleranceArgs {
    /// Relative tolerance of the adaptive integrator (default 1e-9).
    #[arg(long = "rel-tol")]
    rel_tol: Option<f64>,
    /// Absolute tolerance of the adaptive integrator (default 1e-9).
    #[arg(long = "abs-tol")]
    abs_tol: Option<f64>,
    /// Cell-problem horizon for trajectory slopes (default 1e4).
    #[arg(long)]
    horizon: Option<f64>,
    /// Target accuracy of quadrature slopes (default 1e-12).
    #[arg(long = "quad-tol")]
    quad_tol: Option<f64>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ValidateArgs {
    /// Number of sample points (default 10000).
    #[arg(long)]
    samples: Option<usize>,
    /// Seed of the random half of the sampler (default 0).
    #[arg(long = "rng-seed")]
    rng_seed: Option<u64>,
    /// Upper end of the sampled t range (default 1).
    #[arg(long = "t-ref")]
    t_ref: Option<f64>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolveEpsArgs {
    #[arg(long)]
    eps: Option<f64>,
    /// Initial value (default 0).
    #[arg(long)]
    u0: Option<f64>,
    /// Final time (default 1).
    #[arg(long = "T")]
    #[serde(rename = "T")]
    t_final: Option<f64>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SlopeArgs {
    /// Frozen macroscopic u.
    #[arg(long)]
    u: Option<f64>,
    /// Frozen macroscopic t (default 0).
    #[arg(long)]
    t: Option<f64>,
    /// auto, trajectory, quadrature or window (default auto).
    #[arg(long)]
    method: Option<String>,
    /// Window length for the window method (default horizon / 20).
    #[arg(long)]
    window: Option<f64>,
    /// Tabulate over u as lo,hi,n instead of a single point.
    #[arg(long = "u-grid", value_delimiter = ',')]
    u_grid: Option<Vec<f64>>,
    /// Table t axis as lo,hi,n (default: the single value --t).
    #[arg(long = "t-grid", value_delimiter = ',')]
    t_grid: Option<Vec<f64>>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HomogenizeArgs {
    /// Initial value (default 0).
    #[arg(long)]
    u0: Option<f64>,
    /// Time step.
    #[arg(long)]
    dt: Option<f64>,
    /// Number of steps; alternatively give --T.
    #[arg(long)]
    steps: Option<usize>,
    /// Final time; the step count is ceil(T / dt).
    #[arg(long = "T")]
    #[serde(rename = "T")]
    t_final: Option<f64>,
    /// Slope source: direct, table or exact (default direct).
    #[arg(long)]
    source: Option<String>,
    /// Slope-table points along u when --source table (default 101).
    #[arg(long = "table-points")]
    table_points: Option<usize>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RateArgs {
    /// Initial value (default 0).
    #[arg(long)]
    u0: Option<f64>,
    /// Final time.
    #[arg(long = "T")]
    #[serde(rename = "T")]
    t_final: Option<f64>,
    /// Oscillation scales, comma separated.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Constant C in T >= C eps |log eps| and dt = C eps |log eps| (default 1).
    #[arg(long = "C")]
    #[serde(rename = "C")]
    c: Option<f64>,
    /// Uniform sample times for the sup norm (default 1000).
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SharpnessArgs {
    /// Multiple of eps |log eps| at which the gap is read (default 1).
    #[arg(long)]
    delta: Option<f64>,
    /// Oscillation scales, comma separated (default 1e-3,1e-4,1e-5).
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StabilityArgs {
    /// Frozen macroscopic u (default 0).
    #[arg(long)]
    u: Option<f64>,
    /// Frozen macroscopic t (default 0).
    #[arg(long)]
    t: Option<f64>,
    /// Perturbation sizes in (0, 1), comma separated (default 1e-2,1e-4,1e-6).
    #[arg(long, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransportArgs {
    /// Initial datum in x1, x2 (default x1).
    #[arg(long, allow_hyphen_values = true)]
    v0: Option<String>,
    /// Declared Lipschitz constant of the initial datum (default 1).
    #[arg(long = "lip-v0")]
    lip_v0: Option<f64>,
    /// x1 grid as lo,hi,n (default 0,1,21).
    #[arg(long, value_delimiter = ',')]
    x1: Option<Vec<f64>>,
    /// x2 grid as lo,hi,n (default 0,1,21).
    #[arg(long, value_delimiter = ',')]
    x2: Option<Vec<f64>>,
    /// Sample times, comma separated (default 0.25,0.5,1).
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    /// Oscillation scale.
    #[arg(long)]
    eps: Option<f64>,
    /// Slope source for the homogenized characteristics: table, direct or exact (default table).
    #[arg(long)]
    source: Option<String>,
    /// u range of the slope table as lo,hi (default: reachable band).
    #[arg(long = "table-u", value_delimiter = ',')]
    table_u: Option<Vec<f64>>,
    /// Slope-table points along u (default 41).
    #[arg(long = "table-points")]
    table_points: Option<usize>,
    /// Slope-table points along t (default 11).
    #[arg(long = "table-t-points")]
    table_t_points: Option<usize>,
}

/// Whether a completed run found a violated inequality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Clean,
    Violation,
}

impl Outcome {
    fn from_ok(ok: bool) -> Self {
        if ok {
            Outcome::Clean
        } else {
            Outcome::Violation
        }
    }
}

struct Output {
    path: Option<PathBuf>,
}

impl Output {
    fn csv<F>(&self, write: F) -> Result<()>
    where
        F: FnOnce(&mut dyn Write) -> csv::Result<()>,
    {
        match &self.path {
            Some(p) => {
                let file = File::create(p).with_context(|| format!("creating {}", p.display()))?;
                let mut w = BufWriter::new(file);
                write(&mut w).with_context(|| format!("writing {}", p.display()))?;
                w.flush()?;
            }
            None => {
                let mut lock = io::stdout().lock();
                write(&mut lock).context("writing CSV to stdout")?;
                lock.flush()?;
            }
        }
        Ok(())
    }

    fn summary(&self, line: impl AsRef<str>) {
        if self.path.is_some() {
            println!("{}", line.as_ref());
        } else {
            eprintln!("{}", line.as_ref());
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Usage errors exit 1; 2 is reserved for violated inequalities.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::Violation) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    if let Some(jobs) = cli.jobs.or(file.jobs) {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let out = Output {
        path: cli.out.clone().or_else(|| file.out.clone()),
    };
    match cli.command {
        Command::Validate(c) => {
            let (field, _) = setup(&file, &c.problem, &c.tolerance)?;
            cmd_validate(
                &field,
                merge("validate", file.validate.as_ref(), &c.args)?,
                &out,
            )
        }
        Command::SolveEps(c) => {
            let (field, tol) = setup(&file, &c.problem, &c.tolerance)?;
            cmd_solve_eps(
                &field,
                &tol,
                merge("solve_eps", file.solve_eps.as_ref(), &c.args)?,
                &out,
            )
        }
        Command::Slope(c) => {
            let (field, tol) = setup(&file, &c.problem, &c.tolerance)?;
            cmd_slope(
                &field,
                &tol,
                merge("slope", file.slope.as_ref(), &c.args)?,
                &out,
            )
        }
        Command::Homogenize(c) => {
            let (field, tol) = setup(&file, &c.problem, &c.tolerance)?;
            cmd_homogenize(
                &field,
                &tol,
                merge("homogenize", file.homogenize.as_ref(), &c.args)?,
                &out,
            )
        }
        Command::Rate(c) => {
            let (field, tol) = setup(&file, &c.problem, &c.tolerance)?;
            cmd_rate(
                &field,
                &tol,
                merge("rate", file.rate.as_ref(), &c.args)?,
                &out,
            )
        }
        Command::Sharpness(c) => {
            let tol = merge("tolerance", file.tolerance.as_ref(), &c.tolerance)?;
            cmd_sharpness(
                &tol,
                merge("sharpness", file.sharpness.as_ref(), &c.args)?,
                &out,
            )
        }
        Command::Stability(c) => {
            let (field, tol) = setup(&file, &c.problem, &c.tolerance)?;
            cmd_stability(
                &field,
                &tol,
                merge("stability", file.stability.as_ref(), &c.args)?,
                &out,
            )
        }
        Command::Transport(c) => {
            let (field, tol) = setup(&file, &c.problem, &c.tolerance)?;
            cmd_transport(
                field,
                &tol,
                merge("transport", file.transport.as_ref(), &c.args)?,
                &out,
            )
        }
    }
}

fn setup(
    file: &ConfigFile,
    problem: &ProblemArgs,
    tolerance: &ToleranceArgs,
) -> Result<(ProblemField, ToleranceArgs)> {
    let problem: ProblemArgs = merge("problem", file.problem.as_ref(), problem)?;
    let tol: ToleranceArgs = merge("tolerance", file.tolerance.as_ref(), tolerance)?;
    Ok((build_field(&problem)?, tol))
}

fn build_field(p: &ProblemArgs) -> Result<ProblemField> {
    let u_box = match &p.u_box {
        None => DEFAULT_U_BOX,
        Some(v) if v.len() == 2 => (v[0], v[1]),
        Some(v) => bail!("u_box needs two values lo,hi, got {}", v.len()),
    };
    match (&p.problem, &p.expr) {
        (Some(_), Some(_)) => bail!("give either a built-in problem or an expression, not both"),
        (None, None) => bail!("no field given: use --problem <name> or --expr <expression>"),
        (Some(name), None) => {
            if p.alpha.is_some() || p.beta.is_some() || p.lipschitz.is_some() {
                bail!("declared bounds apply to --expr fields only; built-ins carry their own");
            }
            Ok(builtin_in_box(
                name,
                p.params.as_deref().unwrap_or(&[]),
                u_box,
            )?)
        }
        (None, Some(source)) => {
            if p.params.is_some() {
                bail!("--params applies to built-in problems only");
            }
            let need = |x: Option<f64>, name: &str| {
                x.ok_or_else(|| anyhow!("expression fields need a declared {name}"))
            };
            let bounds = DeclaredBounds {
                alpha: need(p.alpha, "alpha")?,
                beta: need(p.beta, "beta")?,
                lipschitz_v: need(p.lipschitz, "lipschitz")?,
                u_box,
            };
            if !(bounds.beta > 0.0 && bounds.alpha > 0.0 && bounds.lipschitz_v > 0.0) {
                bail!("declared alpha, beta and lipschitz must be positive");
            }
            let field = ProblemField::from_expression(source, bounds)?;
            let report = validate(&field, ValidateOptions::default())?;
            if !report.passes(&field) {
                log::warn!(
                    "field `{source}` failed validation; slope radii are reported uncertified"
                );
            }
            Ok(field.certify(&report))
        }
    }
}

impl ToleranceArgs {
    fn spec(&self) -> ToleranceSpec {
        let d = ToleranceSpec::default();
        ToleranceSpec::new(
            self.rel_tol.unwrap_or(d.rel_tol),
            self.abs_tol.unwrap_or(d.abs_tol),
        )
    }

    fn slope_options(&self) -> SlopeOptions {
        let d = SlopeOptions::default();
        SlopeOptions {
            horizon: self.horizon.unwrap_or(d.horizon),
            tol: self.spec(),
            quad_tol: self.quad_tol.unwrap_or(d.quad_tol),
            quad_floor: d.quad_floor,
        }
    }
}

fn required<T: Copy>(x: Option<T>, key: &str) -> Result<T> {
    x.ok_or_else(|| anyhow!("missing `{key}` (flag or config key)"))
}

/// `lo,hi,n` to an evenly spaced grid.
fn grid(spec: &[f64], key: &str) -> Result<Vec<f64>> {
    match *spec {
        [lo, hi, n]
            if n >= 1.0
                && n.fract() == 0.0
                && lo.is_finite()
                && hi.is_finite()
                && (n == 1.0 || hi > lo) =>
        {
            Ok(linspace(lo, hi, n as usize))
        }
        _ => bail!("`{key}` must be lo,hi,n with hi > lo and integer n >= 1, got {spec:?}"),
    }
}

fn estimate_row(
    w: &mut csv::Writer<&mut dyn Write>,
    u: f64,
    t: f64,
    e: &SlopeEstimate,
) -> csv::Result<()> {
    w.write_record([
        u.to_string(),
        t.to_string(),
        e.value.to_string(),
        e.certified_radius.to_string(),
        e.method.as_str().to_string(),
    ])
}

fn cmd_validate(field: &ProblemField, a: ValidateArgs, out: &Output) -> Result<Outcome> {
    let d = ValidateOptions::default();
    let opts = ValidateOptions {
        samples: a.samples.unwrap_or(d.samples),
        seed: a.rng_seed.unwrap_or(d.seed),
        t_ref: a.t_ref.unwrap_or(d.t_ref),
    };
    let report = validate(field, opts)?;
    out.csv(|w| {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["quantity", "sampled", "declared"])?;
        w.write_record([
            "beta".to_string(),
            report.sampled_beta.to_string(),
            field.beta.to_string(),
        ])?;
        w.write_record([
            "alpha".to_string(),
            report.sampled_alpha.to_string(),
            field.alpha.to_string(),
        ])?;
        let limit = homlab::field::DEFECT_TOLERANCE.to_string();
        w.write_record([
            "periodicity_defect".to_string(),
            report.periodicity_defect.to_string(),
            limit.clone(),
        ])?;
        w.write_record([
            "monotonicity_defect".to_string(),
            report.monotonicity_defect.to_string(),
            limit,
        ])?;
        w.write_record([
            "non_finite".to_string(),
            report.non_finite.to_string(),
            "0".to_string(),
        ])?;
        w.flush()?;
        Ok(())
    })?;
    let passes = report.passes(field);
    out.summary(format!(
        "field={} samples={} passes={passes}",
        field.label(),
        report.sample_count
    ));
    Ok(Outcome::from_ok(passes))
}

fn cmd_solve_eps(
    field: &ProblemField,
    tol: &ToleranceArgs,
    a: SolveEpsArgs,
    out: &Output,
) -> Result<Outcome> {
    let eps = required(a.eps, "eps")?;
    let traj = solve_oscillatory(
        field,
        eps,
        a.u0.unwrap_or(0.0),
        a.t_final.unwrap_or(1.0),
        tol.spec(),
    )?;
    out.csv(|w| traj.write_csv(w))?;
    out.summary(format!(
        "end_value={} samples={} rhs_evals={}",
        traj.end_value(),
        traj.len(),
        traj.rhs_evals
    ));
    Ok(Outcome::Clean)
}

fn cmd_slope(
    field: &ProblemField,
    tol: &ToleranceArgs,
    a: SlopeArgs,
    out: &Output,
) -> Result<Outcome> {
    let opts = tol.slope_options();
    // A single point prints its summary to stdout and writes CSV only with --out.
    if let Some(u_spec) = &a.u_grid {
        let u_grid = grid(u_spec, "u_grid")?;
        let t_grid = match &a.t_grid {
            Some(s) => grid(s, "t_grid")?,
            None => vec![a.t.unwrap_or(0.0)],
        };
        let table = effective_field(field, &u_grid, &t_grid, &opts)?;
        out.csv(|w| table.write_csv(w))?;
        let excess = table.monotonicity_excess();
        out.summary(format!(
            "cells={} max_radius={:e} monotonicity_excess={excess:e}",
            u_grid.len() * t_grid.len(),
            table.max_radius()
        ));
        return Ok(Outcome::from_ok(excess <= 0.0));
    }
    let u = required(a.u, "u")?;
    let t = a.t.unwrap_or(0.0);
    let method = a.method.as_deref().unwrap_or("auto");
    let primary = match method {
        "auto" => estimate_best(field, u, t, &opts)?,
        "trajectory" => estimate_trajectory(field, u, t, opts.horizon, opts.tol)?,
        "quadrature" => {
            estimate_quadrature_with_floor(field, u, t, opts.quad_tol, opts.quad_floor)?
        }
        "window" => {
            let window = a.window.unwrap_or(opts.horizon / 20.0);
            let b = estimate_window(field, u, t, opts.horizon, window, window / 10.0, opts.tol)?;
            if out.path.is_some() {
                out.csv(|w| {
                    let mut w = csv::Writer::from_writer(w);
                    w.write_record(["u", "t", "lambda_minus", "lambda_plus", "windows"])?;
                    w.write_record(
                        [u, t, b.lambda_minus, b.lambda_plus, b.windows as f64]
                            .map(|x| x.to_string()),
                    )?;
                    w.flush()?;
                    Ok(())
                })?;
            }
            println!(
                "lambda_minus={} lambda_plus={} width={:e} windows={}",
                b.lambda_minus,
                b.lambda_plus,
                b.width(),
                b.windows
            );
            return Ok(match closed_form_slope(field, u, t) {
                Some(exact) => {
                    println!("closed_form={exact} inside={}", b.contains(exact));
                    Outcome::from_ok(b.contains(exact))
                }
                None => Outcome::Clean,
            });
        }
        other => bail!("unknown slope method `{other}` (auto, trajectory, quadrature, window)"),
    };
    let mut rows = vec![primary];
    let mut ok = true;
    println!(
        "lambda={} radius={:.1e} method={}",
        primary.value,
        primary.certified_radius,
        primary.method.as_str()
    );
    // Cross-check against the other estimator when it applies.
    let check = match primary.method {
        homlab::slope::SlopeMethod::Quadrature => {
            Some(estimate_trajectory(field, u, t, opts.horizon, opts.tol))
        }
        _ if field.flags.tau_independent => Some(estimate_quadrature_with_floor(
            field,
            u,
            t,
            opts.quad_tol,
            opts.quad_floor,
        )),
        _ => None,
    };
    match check {
        Some(Ok(other)) => {
            let agree = (other.value - primary.value).abs()
                <= other.certified_radius + primary.certified_radius;
            println!(
                "check lambda={} radius={:.1e} method={} agree={agree}",
                other.value,
                other.certified_radius,
                other.method.as_str()
            );
            ok &= agree;
            rows.push(other);
        }
        Some(Err(e)) => println!("check skipped: {e}"),
        None => {}
    }
    if let Some(exact) = closed_form_slope(field, u, t) {
        let inside = primary.contains(exact);
        println!("closed_form={exact} inside={inside}");
        ok &= inside;
    }
    if out.path.is_some() {
        out.csv(|w| {
            let mut w = csv::Writer::from_writer(w);
            w.write_record(["u", "t", "lambda", "radius", "method"])?;
            for e in &rows {
                estimate_row(&mut w, u, t, e)?;
            }
            w.flush()?;
            Ok(())
        })?;
    }
    Ok(Outcome::from_ok(ok))
}

fn cmd_homogenize(
    field: &ProblemField,
    tol: &ToleranceArgs,
    a: HomogenizeArgs,
    out: &Output,
) -> Result<Outcome> {
    let u0 = a.u0.unwrap_or(0.0);
    let dt = required(a.dt, "dt")?;
    if !(dt > 0.0) {
        bail!("dt must be positive, got {dt}");
    }
    let steps = match (a.steps, a.t_final) {
        (Some(n), None) => n,
        (None, Some(t)) if t > 0.0 => (t / dt - 1e-9).ceil().max(1.0) as usize,
        (None, Some(t)) => bail!("T must be positive, got {t}"),
        (Some(_), Some(_)) => bail!("give either steps or T, not both"),
        (None, None) => bail!("missing `steps` or `T`"),
    };
    let t_end = steps as f64 * dt;
    let opts = tol.slope_options();
    let table: SlopeTable;
    let direct = DirectSlope { field, opts };
    let exact = ExactSlope { field };
    let source: &dyn SlopeSource = match a.source.as_deref().unwrap_or("direct") {
        "direct" => &direct,
        "exact" => {
            if !ExactSlope::available(field) {
                bail!("no closed-form slope for {}", field.label());
            }
            &exact
        }
        "table" => {
            let reach = field.beta * t_end;
            let u_grid = linspace(u0 - reach, u0 + reach, a.table_points.unwrap_or(101).max(2));
            let t_grid = linspace(0.0, t_end, 11);
            table = effective_field(field, &u_grid, &t_grid, &opts)?;
            &table
        }
        other => bail!("unknown slope source `{other}` (direct, table, exact)"),
    };
    let path = run_scheme(u0, dt, steps, source)?;
    out.csv(|w| path.write_csv(w))?;
    out.summary(format!(
        "end_time={} end_value={} max_radius={:e} propagated_radius={:e}",
        path.end_time(),
        path.end_value(),
        path.max_radius(),
        path.propagated_radius()
    ));
    if let Some(exact) = analytic_solution(field, u0) {
        out.summary(format!(
            "analytic_end_value={}",
            exact.value_at(path.end_time())
        ));
    }
    Ok(Outcome::Clean)
}

fn cmd_rate(
    field: &ProblemField,
    tol: &ToleranceArgs,
    a: RateArgs,
    out: &Output,
) -> Result<Outcome> {
    let d = RateOptions::default();
    let opts = RateOptions {
        c: a.c.unwrap_or(d.c),
        tol: tol.spec(),
        samples: a.samples.unwrap_or(d.samples),
        slope: tol.slope_options(),
        ..d
    };
    let t_final = required(a.t_final, "T")?;
    let eps = a
        .eps
        .ok_or_else(|| anyhow!("missing `eps` (flag or config key)"))?;
    let report = rate_experiment(field, a.u0.unwrap_or(0.0), t_final, &eps, &opts)?;
    out.csv(|w| report.write_csv(w))?;
    let growth = report.max_product_growth();
    out.summary(format!("fitted_c={}", report.fitted_c));
    out.summary(format!(
        "max_product_growth={growth} analytic_reference={}",
        report.analytic_reference
    ));
    Ok(Outcome::from_ok(growth <= 2.0))
}

fn cmd_sharpness(tol: &ToleranceArgs, a: SharpnessArgs, out: &Output) -> Result<Outcome> {
    let spec = ToleranceSpec::new(
        tol.rel_tol.unwrap_or(SHARPNESS_TOL.rel_tol),
        tol.abs_tol.unwrap_or(SHARPNESS_TOL.abs_tol),
    );
    let eps = a.eps.unwrap_or_else(|| vec![1e-3, 1e-4, 1e-5]);
    let rows = sharpness_experiment(a.delta.unwrap_or(1.0), &eps, spec)?;
    out.csv(|w| write_sharpness_csv(&rows, w))?;
    let worst = rows
        .iter()
        .map(|r| (r.ratio - 1.0).abs())
        .fold(0.0, f64::max);
    out.summary(format!(
        "rows={} max_abs_ratio_deviation={worst:e}",
        rows.len()
    ));
    Ok(Outcome::Clean)
}

fn cmd_stability(
    field: &ProblemField,
    tol: &ToleranceArgs,
    a: StabilityArgs,
    out: &Output,
) -> Result<Outcome> {
    let gammas = a.gamma.unwrap_or_else(|| vec![1e-2, 1e-4, 1e-6]);
    let report = stability_experiment(
        field,
        a.u.unwrap_or(0.0),
        a.t.unwrap_or(0.0),
        &gammas,
        &tol.slope_options(),
    )?;
    out.csv(|w| report.write_csv(w))?;
    let violations = report.rows.iter().filter(|r| !r.holds()).count();
    out.summary(format!(
        "xi_bar={} rows={} violations={violations}",
        report.xi_bar,
        report.rows.len()
    ));
    Ok(Outcome::from_ok(violations == 0))
}

fn cmd_transport(
    field: ProblemField,
    tol: &ToleranceArgs,
    a: TransportArgs,
    out: &Output,
) -> Result<Outcome> {
    let eps = required(a.eps, "eps")?;
    let v0_src = a.v0.clone().unwrap_or_else(|| "x1".to_string());
    let v0 = parse_initial(&v0_src).with_context(|| format!("initial datum `{v0_src}`"))?;
    let x1 = grid(a.x1.as_deref().unwrap_or(&[0.0, 1.0, 21.0]), "x1")?;
    let x2 = grid(a.x2.as_deref().unwrap_or(&[0.0, 1.0, 21.0]), "x2")?;
    let times = a.times.clone().unwrap_or_else(|| vec![0.25, 0.5, 1.0]);
    let lip = a.lip_v0.unwrap_or(1.0);
    let problem = TransportProblem::new(field, v0, lip, x1, x2, times, eps, tol.spec())?;
    let opts = tol.slope_options();
    let field = &problem.field;
    let table: SlopeTable;
    let direct = DirectSlope { field, opts };
    let exact = ExactSlope { field };
    let source: &dyn SlopeSource = match a.source.as_deref().unwrap_or("table") {
        "table" => {
            let u_range = match &a.table_u {
                None => None,
                Some(v) if v.len() == 2 && v[1] > v[0] => Some((v[0], v[1])),
                Some(v) => bail!("table_u must be lo,hi with hi > lo, got {v:?}"),
            };
            table = transport_table(
                &problem,
                u_range,
                a.table_points.unwrap_or(DEFAULT_TABLE_POINTS),
                a.table_t_points.unwrap_or(11),
                &opts,
            )?;
            &table
        }
        "direct" => &direct,
        "exact" => {
            if !ExactSlope::available(field) {
                bail!("no closed-form slope for {}", field.label());
            }
            &exact
        }
        other => bail!("unknown slope source `{other}` (table, direct, exact)"),
    };
    let solution = solve_transport(&problem, source)?;
    out.csv(|w| solution.write_csv(w))?;
    out.summary(format!(
        "sup_error={} sup_error_over_eps={} char_radius={:e}",
        solution.sup_error,
        solution.sup_error / eps,
        solution.char_radius
    ));
    // The O(eps) estimate applies when f depends on v alone.
    let flags = field.flags;
    if flags.tau_independent && flags.u_independent && flags.t_independent {
        let bound = field.xi() * lip * eps + lip * solution.char_radius;
        let ok = solution.sup_error <= bound;
        out.summary(format!("bound={bound} holds={ok}"));
        return Ok(Outcome::from_ok(ok));
    }
    Ok(Outcome::Clean)
}
