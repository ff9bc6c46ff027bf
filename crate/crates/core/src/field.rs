//! Oscillatory right-hand sides `f(v, tau, u, t)`.
//!
//! A field is 1-periodic in its fast variables `v` and `tau`, non-increasing
//! in `u`, and carries declared bounds (`alpha`, `beta`, `lipschitz_v`) that
//! hold over a compact `u_box`. Built-in fields have exact metadata;
//! expression-backed fields carry whatever the user declared and stay
//! uncertified until [`validate`] finds no defects.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::{self, Expr};

/// Variable names available to field expressions, in slot order.
pub const FIELD_VARIABLES: [&str; 4] = ["v", "tau", "u", "t"];

/// Defects above this level make a field (and everything derived from it) uncertified.
pub const DEFECT_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_U_BOX: (f64, f64) = (-4.0, 4.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("unknown built-in field `{0}` (expected example1, example2, example3, constant, shifted_cosine)")]
    UnknownBuiltin(String),
    #[error("built-in `{name}` takes {expected} parameter(s), got {found}")]
    ParamCount {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid parameter for `{name}`: {reason}")]
    InvalidParam { name: String, reason: String },
    #[error(transparent)]
    Parse(#[from] expr::ParseError),
    #[error("invalid declared bounds: {0}")]
    Bounds(String),
}

/// The built-in fields. Parameters are part of the variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Builtin {
    /// `-u + cos(2 pi v)`
    Example1,
    /// `-u + |sin(2 pi v)|`
    Example2,
    /// `g(v + tau) - 1` with `g(w) = |w - 1/2|` on `[0, 1]`, extended periodically.
    Example3,
    Constant(f64),
    /// `-a + cos(2 pi v)`
    ShiftedCosine(f64),
}

impl Builtin {
    pub fn name(&self) -> &'static str {
        match self {
            Builtin::Example1 => "example1",
            Builtin::Example2 => "example2",
            Builtin::Example3 => "example3",
            Builtin::Constant(_) => "constant",
            Builtin::ShiftedCosine(_) => "shifted_cosine",
        }
    }

    fn eval(&self, v: f64, tau: f64, u: f64) -> f64 {
        match *self {
            Builtin::Example1 => -u + (2.0 * PI * frac(v)).cos(),
            Builtin::Example2 => -u + (2.0 * PI * frac(v)).sin().abs(),
            Builtin::Example3 => sawtooth(v + tau) - 1.0,
            Builtin::Constant(c) => c,
            Builtin::ShiftedCosine(a) => -a + (2.0 * PI * frac(v)).cos(),
        }
    }
}

/// 1-periodic `g(w) = |w - 1/2|` for `w` in `[0, 1)`.
pub fn sawtooth(w: f64) -> f64 {
    (frac(w) - 0.5).abs()
}

#[inline]
fn frac(x: f64) -> f64 {
    x - x.floor()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StructureFlags {
    pub tau_independent: bool,
    pub u_independent: bool,
    pub t_independent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldSource {
    Builtin(Builtin),
    Expression(String),
}

#[derive(Debug, Clone)]
enum Kernel {
    Builtin(Builtin),
    Expr(Arc<Expr>),
}

/// An oscillatory right-hand side with its bound metadata.
#[derive(Debug, Clone)]
pub struct ProblemField {
    kernel: Kernel,
    /// Additive constant, used for the perturbed fields `f + gamma`.
    offset: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lipschitz_v: f64,
    pub u_box: (f64, f64),
    pub flags: StructureFlags,
    pub source: FieldSource,
    certified: bool,
}

/// Declared metadata for an expression-backed field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeclaredBounds {
    pub alpha: f64,
    pub beta: f64,
    pub lipschitz_v: f64,
    pub u_box: (f64, f64),
}

/// Looks up a built-in by name, checking its parameter list.
pub fn builtin(name: &str, params: &[f64]) -> Result<ProblemField, FieldError> {
    builtin_in_box(name, params, DEFAULT_U_BOX)
}

pub fn builtin_in_box(
    name: &str,
    params: &[f64],
    u_box: (f64, f64),
) -> Result<ProblemField, FieldError> {
    let expect = |n: usize| {
        if params.len() == n {
            Ok(())
        } else {
            Err(FieldError::ParamCount {
                name: name.to_string(),
                expected: n,
                found: params.len(),
            })
        }
    };
    let b = match name {
        "example1" => expect(0).map(|_| Builtin::Example1)?,
        "example2" => expect(0).map(|_| Builtin::Example2)?,
        "example3" => expect(0).map(|_| Builtin::Example3)?,
        "constant" => expect(1).map(|_| Builtin::Constant(params[0]))?,
        "shifted_cosine" => expect(1).map(|_| Builtin::ShiftedCosine(params[0]))?,
        other => return Err(FieldError::UnknownBuiltin(other.to_string())),
    };
    if let Some(bad) = params.iter().find(|p| !p.is_finite()) {
        return Err(FieldError::InvalidParam {
            name: name.to_string(),
            reason: format!("parameter {bad} is not finite"),
        });
    }
    ProblemField::from_builtin(b, u_box)
}

fn check_box(u_box: (f64, f64)) -> Result<(), FieldError> {
    if u_box.0.is_finite() && u_box.1.is_finite() && u_box.0 < u_box.1 {
        Ok(())
    } else {
        Err(FieldError::Bounds(format!(
            "u_box [{}, {}] must be a finite non-empty interval",
            u_box.0, u_box.1
        )))
    }
}

impl ProblemField {
    pub fn from_builtin(b: Builtin, u_box: (f64, f64)) -> Result<Self, FieldError> {
        check_box(u_box)?;
        let umax = u_box.0.abs().max(u_box.1.abs());
        let two_pi = 2.0 * PI;
        let all = StructureFlags {
            tau_independent: true,
            u_independent: true,
            t_independent: true,
        };
        let (alpha, beta, lipschitz_v, flags) = match b {
            Builtin::Example1 | Builtin::Example2 => (
                two_pi,
                umax + 1.0,
                two_pi,
                StructureFlags {
                    u_independent: false,
                    ..all
                },
            ),
            Builtin::Example3 => (
                1.0,
                1.0,
                1.0,
                StructureFlags {
                    tau_independent: false,
                    ..all
                },
            ),
            Builtin::Constant(c) => (0.0, c.abs(), 0.0, all),
            Builtin::ShiftedCosine(a) => (two_pi, a.abs() + 1.0, two_pi, all),
        };
        Ok(ProblemField {
            kernel: Kernel::Builtin(b),
            offset: 0.0,
            alpha,
            beta,
            lipschitz_v,
            u_box,
            flags,
            source: FieldSource::Builtin(b),
            certified: true,
        })
    }

    /// Builds a field from an expression in `v, tau, u, t`. The result is
    /// uncertified until passed through [`ProblemField::certify`].
    pub fn from_expression(source: &str, bounds: DeclaredBounds) -> Result<Self, FieldError> {
        check_box(bounds.u_box)?;
        for (label, x) in [
            ("alpha", bounds.alpha),
            ("beta", bounds.beta),
            ("lipschitz_v", bounds.lipschitz_v),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                return Err(FieldError::Bounds(format!(
                    "{label} = {x} must be finite and >= 0"
                )));
            }
        }
        let names: Vec<String> = FIELD_VARIABLES.iter().map(|s| s.to_string()).collect();
        let ast = expr::parse(source, &names)?;
        let flags = StructureFlags {
            tau_independent: !ast.uses_variable("tau"),
            u_independent: !ast.uses_variable("u"),
            t_independent: !ast.uses_variable("t"),
        };
        Ok(ProblemField {
            kernel: Kernel::Expr(Arc::new(ast)),
            offset: 0.0,
            alpha: bounds.alpha,
            beta: bounds.beta,
            lipschitz_v: bounds.lipschitz_v,
            u_box: bounds.u_box,
            flags,
            source: FieldSource::Expression(source.to_string()),
            certified: false,
        })
    }

    /// `f + gamma`, with `beta` widened accordingly.
    pub fn perturbed(&self, gamma: f64) -> Self {
        let mut out = self.clone();
        out.offset += gamma;
        out.beta += gamma.abs();
        out
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn builtin(&self) -> Option<Builtin> {
        match self.kernel {
            Kernel::Builtin(b) => Some(b),
            Kernel::Expr(_) => None,
        }
    }

    /// Whether certified radii derived from this field can be trusted.
    pub fn is_certified(&self) -> bool {
        self.certified
    }

    /// Marks the field certified when `report` shows no defects.
    pub fn certify(mut self, report: &BoundsReport) -> Self {
        self.certified = report.passes(&self);
        self
    }

    /// Ergodic radius `1 + 2 beta`.
    pub fn xi(&self) -> f64 {
        1.0 + 2.0 * self.beta
    }

    /// `(3 + 2 xi)(1 + 2 L)` from the stability estimate.
    pub fn xi_bar(&self) -> f64 {
        (3.0 + 2.0 * self.xi()) * (1.0 + 2.0 * self.lipschitz_v)
    }

    /// Evaluates `f(v, tau, u, t)`; domain errors of expressions become NaN.
    #[inline]
    pub fn evaluate(&self, v: f64, tau: f64, u: f64, t: f64) -> f64 {
        match &self.kernel {
            Kernel::Builtin(b) => b.eval(v, tau, u) + self.offset,
            Kernel::Expr(e) => e
                .eval_slots(&[v, tau, u, t])
                .map_or(f64::NAN, |x| x + self.offset),
        }
    }

    pub fn try_evaluate(&self, v: f64, tau: f64, u: f64, t: f64) -> Result<f64, expr::EvalError> {
        match &self.kernel {
            Kernel::Builtin(b) => Ok(b.eval(v, tau, u) + self.offset),
            Kernel::Expr(e) => Ok(e.eval_slots(&[v, tau, u, t])? + self.offset),
        }
    }

    /// Human-readable label used in reports.
    pub fn label(&self) -> String {
        let base = match &self.source {
            FieldSource::Builtin(Builtin::Constant(c)) => format!("constant({c})"),
            FieldSource::Builtin(Builtin::ShiftedCosine(a)) => format!("shifted_cosine({a})"),
            FieldSource::Builtin(b) => b.name().to_string(),
            FieldSource::Expression(s) => s.clone(),
        };
        if self.offset == 0.0 {
            base
        } else {
            format!("{base} + ({})", self.offset)
        }
    }
}

impl fmt::Display for ProblemField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Sampled evidence for the structural assumptions of a field.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub sampled_beta: f64,
    pub sampled_alpha: f64,
    pub periodicity_defect: f64,
    pub monotonicity_defect: f64,
    pub sample_count: usize,
    /// Evaluations that failed or produced a non-finite value.
    pub non_finite: usize,
}

impl BoundsReport {
    /// No defects beyond [`DEFECT_TOLERANCE`] and sampled bounds within the declared ones.
    pub fn passes(&self, field: &ProblemField) -> bool {
        self.non_finite == 0
            && self.periodicity_defect <= DEFECT_TOLERANCE
            && self.monotonicity_defect <= DEFECT_TOLERANCE
            && self.sampled_beta <= field.beta + DEFECT_TOLERANCE
            && self.sampled_alpha <= field.alpha * (1.0 + 1e-6) + 1e-6
    }
}

/// Parameters of the sampler; `t_ref` is the upper end of the sampled `t` range.
#[derive(Debug, Clone, Copy)]
pub struct ValidateOptions {
    pub samples: usize,
    pub seed: u64,
    pub t_ref: f64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            samples: 10_000,
            seed: 0,
            t_ref: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("validation needs at least 100 samples, got {0}")]
pub struct TooFewSamples(pub usize);

/// Samples the field on a lattice plus uniform random points over
/// `[0,1]^2 x u_box x [0, t_ref]` and reports worst defects and sampled bounds.
pub fn validate(
    field: &ProblemField,
    opts: ValidateOptions,
) -> Result<BoundsReport, TooFewSamples> {
    if opts.samples < 100 {
        return Err(TooFewSamples(opts.samples));
    }
    let (u_lo, u_hi) = field.u_box;
    let lattice_per_axis = ((opts.samples / 2) as f64).powf(0.25).floor().max(2.0) as usize;
    let mut points = Vec::with_capacity(opts.samples);
    let n = lattice_per_axis;
    'outer: for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    if points.len() >= opts.samples / 2 {
                        break 'outer;
                    }
                    let s = |idx: usize| idx as f64 / (n - 1) as f64;
                    points.push([s(i), s(j), u_lo + (u_hi - u_lo) * s(k), opts.t_ref * s(l)]);
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    while points.len() < opts.samples {
        points.push([
            rng.gen::<f64>(),
            rng.gen::<f64>(),
            rng.gen_range(u_lo..=u_hi),
            rng.gen_range(0.0..=opts.t_ref),
        ]);
    }

    let mut report = BoundsReport {
        sampled_beta: 0.0,
        sampled_alpha: 0.0,
        periodicity_defect: 0.0,
        monotonicity_defect: 0.0,
        sample_count: points.len(),
        non_finite: 0,
    };
    const H: f64 = 1e-6;
    let eval = |p: [f64; 4], report: &mut BoundsReport| -> Option<f64> {
        match field.try_evaluate(p[0], p[1], p[2], p[3]) {
            Ok(x) if x.is_finite() => Some(x),
            _ => {
                report.non_finite += 1;
                None
            }
        }
    };
    for (idx, p) in points.iter().copied().enumerate() {
        let Some(f0) = eval(p, &mut report) else {
            continue;
        };
        report.sampled_beta = report.sampled_beta.max(f0.abs());

        for shifted in [
            [p[0] + 1.0, p[1], p[2], p[3]],
            [p[0], p[1] + 1.0, p[2], p[3]],
            [p[0] + 1.0, p[1] + 1.0, p[2], p[3]],
        ] {
            if let Some(fk) = eval(shifted, &mut report) {
                report.periodicity_defect = report.periodicity_defect.max((fk - f0).abs());
            }
        }

        // Partner u above the sample: deterministic spread over the box.
        let frac_step = ((idx as f64) * 0.618_033_988_749_895).fract();
        let u2 = p[2] + (u_hi - p[2]) * frac_step;
        if u2 > p[2] {
            if let Some(f2) = eval([p[0], p[1], u2, p[3]], &mut report) {
                report.monotonicity_defect = report.monotonicity_defect.max(f2 - f0);
            }
        }

        for axis in 0..4 {
            let mut q = p;
            // Step inward so u stays inside the declared box.
            let h = if axis == 2 && q[2] + H > u_hi { -H } else { H };
            q[axis] += h;
            if let Some(fq) = eval(q, &mut report) {
                report.sampled_alpha = report.sampled_alpha.max((fq - f0).abs() / H);
            }
        }
    }
    Ok(report)
}
