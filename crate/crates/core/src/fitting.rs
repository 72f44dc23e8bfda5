//! Parameter recovery from light-in/light-out curves and decay traces.
//!
//! L-L fits minimise squared log10 residuals between the observed output and
//! `scale * p_ss(pump)`. The output scale is profiled out in closed form
//! (the best log-scale is the mean log residual) and the remaining free
//! parameters are searched with Nelder-Mead from Latin-hypercube starts.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::SimParams;
use crate::steady_state::solve_steady;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("need at least {need} points in the fit window, got {got}")]
    WindowTooShort { need: usize, got: usize },
    #[error("sample {0} is not strictly positive")]
    NonPositiveSample(usize),
    #[error("degenerate data: {0}")]
    DegenerateData(&'static str),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("no restart converged (best residual {best:e})")]
    DidNotConverge { best: f64 },
}

/// Result of a log-linear exponential fit `y = amplitude * exp(-t / tau)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpFit {
    pub amplitude: f64,
    /// Infinite for a flat series, negative for growth.
    pub tau: f64,
    pub r2: f64,
    pub flat: bool,
}

/// Least-squares line through `(t, ln y)` restricted to `window` when given.
pub fn fit_exponential(
    t: &[f64],
    y: &[f64],
    window: Option<(f64, f64)>,
) -> Result<ExpFit, FitError> {
    if t.len() != y.len() {
        return Err(FitError::InvalidProblem(
            "time and value series differ in length".into(),
        ));
    }
    let idx: Vec<usize> = (0..t.len())
        .filter(|&i| window.is_none_or(|(lo, hi)| t[i] >= lo && t[i] <= hi))
        .collect();
    if idx.len() < 8 {
        return Err(FitError::WindowTooShort {
            need: 8,
            got: idx.len(),
        });
    }
    if let Some(&i) = idx.iter().find(|&&i| !(y[i] > 0.0 && y[i].is_finite())) {
        return Err(FitError::NonPositiveSample(i));
    }
    let n = idx.len() as f64;
    let mt = idx.iter().map(|&i| t[i]).sum::<f64>() / n;
    let ly: Vec<f64> = idx.iter().map(|&i| y[i].ln()).collect();
    let my = ly.iter().sum::<f64>() / n;
    let mut stt = 0.0;
    let mut sty = 0.0;
    let mut syy = 0.0;
    for (k, &i) in idx.iter().enumerate() {
        let dt = t[i] - mt;
        let dy = ly[k] - my;
        stt += dt * dt;
        sty += dt * dy;
        syy += dy * dy;
    }
    if stt == 0.0 {
        return Err(FitError::DegenerateData("all samples share one time"));
    }
    let slope = sty / stt;
    let intercept = my - slope * mt;
    let ss_res = (syy - slope * sty).max(0.0);
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let flat = slope == 0.0;
    Ok(ExpFit {
        amplitude: intercept.exp(),
        tau: if flat { f64::INFINITY } else { -1.0 / slope },
        r2,
        flat,
    })
}

/// Model parameters that can be left free in a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FitParam {
    Beta,
    G0,
    NTr,
    TauSp,
    TauNr,
    TauW,
    TauC,
    TauP,
    Gamma,
}

impl FitParam {
    pub const ALL: [FitParam; 9] = [
        FitParam::Beta,
        FitParam::G0,
        FitParam::NTr,
        FitParam::TauSp,
        FitParam::TauNr,
        FitParam::TauW,
        FitParam::TauC,
        FitParam::TauP,
        FitParam::Gamma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FitParam::Beta => "beta",
            FitParam::G0 => "g0",
            FitParam::NTr => "n_tr",
            FitParam::TauSp => "tau_sp",
            FitParam::TauNr => "tau_nr",
            FitParam::TauW => "tau_w",
            FitParam::TauC => "tau_c",
            FitParam::TauP => "tau_p",
            FitParam::Gamma => "gamma",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn get(self, p: &SimParams) -> f64 {
        match self {
            FitParam::Beta => p.beta,
            FitParam::G0 => p.g0,
            FitParam::NTr => p.n_tr,
            FitParam::TauSp => p.tau_sp,
            FitParam::TauNr => p.tau_nr,
            FitParam::TauW => p.tau_w,
            FitParam::TauC => p.tau_c,
            FitParam::TauP => p.tau_p,
            FitParam::Gamma => p.gamma,
        }
    }

    pub fn set(self, p: &mut SimParams, v: f64) {
        match self {
            FitParam::Beta => p.beta = v,
            FitParam::G0 => p.g0 = v,
            FitParam::NTr => p.n_tr = v,
            FitParam::TauSp => p.tau_sp = v,
            FitParam::TauNr => p.tau_nr = v,
            FitParam::TauW => p.tau_w = v,
            FitParam::TauC => p.tau_c = v,
            FitParam::TauP => p.tau_p = v,
            FitParam::Gamma => p.gamma = v,
        }
    }

    /// Default search range.
    pub fn default_bounds(self) -> (f64, f64) {
        match self {
            FitParam::Beta => (1e-3, 1.0),
            FitParam::G0 => (1e-7, 1e-4),
            FitParam::NTr => (1e16, 1e18),
            FitParam::TauSp => (10e-12, 10e-9),
            FitParam::TauNr => (10e-12, 100e-9),
            FitParam::TauW => (1e-12, 10e-9),
            FitParam::TauC => (0.1e-12, 1e-9),
            FitParam::TauP => (0.1e-12, 100e-12),
            FitParam::Gamma => (1e-3, 1.0),
        }
    }
}

/// A free parameter with its (positive, ordered) search bounds. The search
/// runs on a log scale between the bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeParam {
    pub param: FitParam,
    pub lower: f64,
    pub upper: f64,
}

impl FreeParam {
    pub fn new(param: FitParam) -> Self {
        let (lower, upper) = param.default_bounds();
        FreeParam {
            param,
            lower,
            upper,
        }
    }

    pub fn with_bounds(param: FitParam, lower: f64, upper: f64) -> Self {
        FreeParam {
            param,
            lower,
            upper,
        }
    }

    fn value_at(&self, z: f64) -> f64 {
        let z = z.clamp(0.0, 1.0);
        if z == 1.0 {
            return self.upper;
        }
        self.lower * (self.upper / self.lower).powf(z)
    }

    fn unit_of(&self, v: f64) -> f64 {
        ((v / self.lower).ln() / (self.upper / self.lower).ln()).clamp(0.0, 1.0)
    }
}

/// Steady-state L-L fit problem.
#[derive(Debug, Clone, PartialEq)]
pub struct FitProblem {
    /// Pump rates [cm^-3 s^-1], strictly ascending and positive.
    pub pumps: Vec<f64>,
    /// Observed output in arbitrary units, positive.
    pub outputs: Vec<f64>,
    /// Values for every parameter that is not free.
    pub base: SimParams,
    pub free: Vec<FreeParam>,
    pub restarts: usize,
    pub seed: u64,
    pub max_evals: usize,
}

impl FitProblem {
    pub fn new(pumps: Vec<f64>, outputs: Vec<f64>, base: SimParams, free: Vec<FreeParam>) -> Self {
        FitProblem {
            pumps,
            outputs,
            base,
            free,
            restarts: 8,
            seed: 0,
            max_evals: 4000,
        }
    }

    /// `beta`, `g0` and `n_tr` (the scale is always free). Only two
    /// combinations of these are identifiable from an L-L curve.
    pub fn default_free_set() -> Vec<FreeParam> {
        vec![
            FreeParam::new(FitParam::Beta),
            FreeParam::new(FitParam::G0),
            FreeParam::new(FitParam::NTr),
        ]
    }

    pub fn validate(&self) -> Result<(), FitError> {
        if self.pumps.len() != self.outputs.len() {
            return Err(FitError::InvalidProblem(
                "pump and output columns differ in length".into(),
            ));
        }
        if self.pumps.len() < 5 {
            return Err(FitError::DegenerateData("need at least 5 points"));
        }
        if self
            .pumps
            .iter()
            .chain(&self.outputs)
            .any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(FitError::DegenerateData(
                "pump and output values must be finite and positive",
            ));
        }
        if self.pumps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FitError::DegenerateData(
                "pump values must be strictly ascending",
            ));
        }
        for (i, f) in self.free.iter().enumerate() {
            if !(f.lower > 0.0 && f.upper > f.lower && f.upper.is_finite()) {
                return Err(FitError::InvalidProblem(format!(
                    "bounds for {} must be positive, finite and ordered",
                    f.param.name()
                )));
            }
            if self.free[..i].iter().any(|g| g.param == f.param) {
                return Err(FitError::InvalidProblem(format!(
                    "{} listed twice",
                    f.param.name()
                )));
            }
        }
        if self.restarts == 0 {
            return Err(FitError::InvalidProblem("restarts must be positive".into()));
        }
        Ok(())
    }

    /// Base parameters with the cavity Q decoupled when `tau_p` is free.
    fn fit_base(&self) -> SimParams {
        let mut base = self.base;
        if self.free.iter().any(|f| f.param == FitParam::TauP) {
            base.q_factor = None;
        }
        base
    }

    fn params_at(&self, z: &[f64]) -> SimParams {
        let mut p = self.fit_base();
        for (f, &zi) in self.free.iter().zip(z) {
            f.param.set(&mut p, f.value_at(zi));
        }
        p
    }

    /// log10 model output for each pump, `None` if any point fails.
    fn model_log_outputs(&self, params: &SimParams) -> Option<Vec<f64>> {
        self.pumps
            .iter()
            .map(|&r| {
                solve_steady(params, r)
                    .ok()
                    .filter(|s| s.p > 0.0)
                    .map(|s| s.p.log10())
            })
            .collect()
    }

    /// Sum of squared log10 residuals with the optimal scale and that
    /// scale's log10.
    fn profiled_sse(&self, params: &SimParams) -> Option<(f64, f64)> {
        let model = self.model_log_outputs(params)?;
        let diffs: Vec<f64> = self
            .outputs
            .iter()
            .zip(&model)
            .map(|(o, m)| o.log10() - m)
            .collect();
        let log_scale = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let sse = diffs.iter().map(|d| (d - log_scale).powi(2)).sum();
        Some((sse, log_scale))
    }

    /// Residual norm for given parameters and a fixed scale.
    pub fn residual_norm(&self, params: &SimParams, scale: f64) -> Option<f64> {
        let model = self.model_log_outputs(params)?;
        let ls = scale.log10();
        let sse: f64 = self
            .outputs
            .iter()
            .zip(&model)
            .map(|(o, m)| (o.log10() - m - ls).powi(2))
            .sum();
        Some(sse.sqrt())
    }

    fn objective(&self, z: &[f64]) -> f64 {
        self.profiled_sse(&self.params_at(z))
            .map_or(f64::INFINITY, |r| r.0)
    }

    /// Largest centered log-log slope of the observed data.
    pub fn observed_max_slope(&self) -> f64 {
        let xy: Vec<(f64, f64)> = self
            .pumps
            .iter()
            .zip(&self.outputs)
            .map(|(a, b)| (a.log10(), b.log10()))
            .collect();
        xy.windows(3)
            .map(|w| (w[2].1 - w[0].1) / (w[2].0 - w[0].0))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SensitivityTarget {
    Param(FitParam),
    Scale,
}

impl SensitivityTarget {
    pub fn name(self) -> &'static str {
        match self {
            SensitivityTarget::Param(p) => p.name(),
            SensitivityTarget::Scale => "scale",
        }
    }
}

/// Change in residual norm per relative change of one parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensitivity {
    pub target: SensitivityTarget,
    pub value: f64,
    /// Only one side of the +-1% stencil stayed inside the bounds.
    pub one_sided: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: SimParams,
    pub values: Vec<(FitParam, f64)>,
    pub scale: f64,
    pub residual: f64,
    pub sensitivities: Vec<Sensitivity>,
    pub iterations: usize,
    pub converged: bool,
    /// Free parameters that ended within 1e-6 (log-scale fraction) of a bound.
    pub at_bounds: Vec<FitParam>,
    /// Whether the observed curve steepens past a log-log slope of 1.2.
    pub spans_threshold: bool,
}

impl FitResult {
    pub fn value(&self, p: FitParam) -> Option<f64> {
        self.values.iter().find(|v| v.0 == p).map(|v| v.1)
    }
}

const PERTURBATION: f64 = 0.01;

/// Residual sensitivity of `targets` around `params`/`scale`, using +-1%
/// steps (one-sided at a bound of a free parameter).
pub fn sensitivity_at(
    problem: &FitProblem,
    params: &SimParams,
    scale: f64,
    targets: &[SensitivityTarget],
) -> Vec<Sensitivity> {
    let r0 = problem
        .residual_norm(params, scale)
        .unwrap_or(f64::INFINITY);
    targets
        .iter()
        .map(|&target| {
            let bounds = match target {
                SensitivityTarget::Param(fp) => problem
                    .free
                    .iter()
                    .find(|f| f.param == fp)
                    .map(|f| (f.lower, f.upper)),
                SensitivityTarget::Scale => None,
            };
            let mut deltas = Vec::with_capacity(2);
            let mut one_sided = false;
            for sign in [1.0, -1.0] {
                let factor = 1.0 + sign * PERTURBATION;
                let r = match target {
                    SensitivityTarget::Scale => problem.residual_norm(params, scale * factor),
                    SensitivityTarget::Param(fp) => {
                        let v = fp.get(params) * factor;
                        if bounds.is_some_and(|(lo, hi)| v < lo || v > hi) {
                            one_sided = true;
                            continue;
                        }
                        let mut p = *params;
                        fp.set(&mut p, v);
                        problem.residual_norm(&p, scale)
                    }
                };
                deltas.push((r.unwrap_or(f64::INFINITY) - r0).abs() / PERTURBATION);
            }
            let value = if deltas.is_empty() {
                0.0
            } else {
                deltas.iter().sum::<f64>() / deltas.len() as f64
            };
            Sensitivity {
                target,
                value,
                one_sided,
            }
        })
        .collect()
}

/// Sensitivities of every free parameter and the scale at a fit result.
pub fn sensitivity(result: &FitResult, problem: &FitProblem) -> Vec<Sensitivity> {
    let mut targets: Vec<_> = problem
        .free
        .iter()
        .map(|f| SensitivityTarget::Param(f.param))
        .collect();
    targets.push(SensitivityTarget::Scale);
    sensitivity_at(problem, &result.params, result.scale, &targets)
}

struct Simplex {
    best: Vec<f64>,
    value: f64,
    evals: usize,
    converged: bool,
}

/// Nelder-Mead on the unit box; points outside are projected back.
fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, start: &[f64], step: f64, max_evals: usize) -> Simplex {
    let d = start.len();
    let clamp = |x: Vec<f64>| -> Vec<f64> { x.into_iter().map(|v| v.clamp(0.0, 1.0)).collect() };
    let mut pts: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..d {
        let mut x = start.to_vec();
        x[i] = if x[i] + step <= 1.0 {
            x[i] + step
        } else {
            x[i] - step
        };
        pts.push(x);
    }
    let mut vals: Vec<f64> = pts.iter().map(|x| f(x)).collect();
    let mut evals = d + 1;
    let mut converged = false;

    while evals < max_evals {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let spread = vals[d] - vals[0];
        let size = pts[1..]
            .iter()
            .map(|x| {
                x.iter()
                    .zip(&pts[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if vals[0].is_finite() && spread.abs() <= 1e-14 + 1e-12 * vals[0].abs() && size <= 1e-9 {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..d)
            .map(|j| pts[..d].iter().map(|x| x[j]).sum::<f64>() / d as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            clamp(
                (0..d)
                    .map(|j| centroid[j] + t * (pts[d][j] - centroid[j]))
                    .collect(),
            )
        };

        let xr = along(-1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                pts[d] = xe;
                vals[d] = fe;
            } else {
                pts[d] = xr;
                vals[d] = fr;
            }
            continue;
        }
        if fr < vals[d - 1] {
            pts[d] = xr;
            vals[d] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[d] {
            let x = along(-0.5);
            let v = f(&x);
            (x, v)
        } else {
            let x = along(0.5);
            let v = f(&x);
            (x, v)
        };
        evals += 1;
        if fc < vals[d].min(fr) {
            pts[d] = xc;
            vals[d] = fc;
            continue;
        }
        // shrink toward the best point
        for i in 1..=d {
            pts[i] = clamp(
                (0..d)
                    .map(|j| pts[0][j] + 0.5 * (pts[i][j] - pts[0][j]))
                    .collect(),
            );
            vals[i] = f(&pts[i]);
        }
        evals += d;
    }
    let i = (0..=d)
        .min_by(|&a, &b| vals[a].total_cmp(&vals[b]))
        .unwrap_or(0);
    Simplex {
        best: pts[i].clone(),
        value: vals[i],
        evals,
        converged,
    }
}

/// Latin-hypercube sample of `n` points in `[0, 1]^d`.
fn latin_hypercube(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; d]; n];
    for j in 0..d {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (i, s) in strata.into_iter().enumerate() {
            points[i][j] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    points
}

struct RestartOutcome {
    z: Vec<f64>,
    sse: f64,
    evals: usize,
    converged: bool,
}

/// Repeated simplex descents from one start until a full descent improves
/// the objective by less than 1e-10.
fn descend(problem: &FitProblem, start: &[f64]) -> RestartOutcome {
    let f = |z: &[f64]| problem.objective(z);
    let mut z = start.to_vec();
    let mut sse = f(&z);
    let mut evals = 1;
    let mut step = 0.1;
    let mut converged = false;
    while evals < problem.max_evals {
        let run = nelder_mead(&f, &z, step, problem.max_evals - evals);
        evals += run.evals;
        let improvement = sse - run.value;
        if run.value <= sse {
            z = run.best;
            sse = run.value;
        }
        if run.converged && improvement.abs() < 1e-10 {
            converged = true;
            break;
        }
        step = 0.05;
    }
    RestartOutcome {
        z,
        sse,
        evals,
        converged,
    }
}

/// Fits the free parameters and output scale to an observed L-L curve.
pub fn fit_ll(problem: &FitProblem) -> Result<FitResult, FitError> {
    problem.validate()?;
    let spans_threshold = problem.observed_max_slope() > 1.2;
    let d = problem.free.len();

    let outcomes: Vec<RestartOutcome> = if d == 0 {
        vec![RestartOutcome {
            z: vec![],
            sse: problem.objective(&[]),
            evals: 1,
            converged: true,
        }]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
        let starts = latin_hypercube(problem.restarts, d, &mut rng);
        starts.par_iter().map(|s| descend(problem, s)).collect()
    };

    let iterations = outcomes.iter().map(|o| o.evals).sum();
    let best = outcomes
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.sse.total_cmp(&b.1.sse).then(a.0.cmp(&b.0)))
        .map(|(_, o)| o)
        .ok_or(FitError::DidNotConverge {
            best: f64::INFINITY,
        })?;
    if !best.sse.is_finite() {
        return Err(FitError::DidNotConverge { best: best.sse });
    }
    if !outcomes.iter().any(|o| o.converged) {
        return Err(FitError::DidNotConverge { best: best.sse });
    }

    let params = problem.params_at(&best.z);
    let (sse, log_scale) = problem
        .profiled_sse(&params)
        .ok_or(FitError::DidNotConverge { best: best.sse })?;
    let values: Vec<(FitParam, f64)> = problem
        .free
        .iter()
        .map(|f| (f.param, f.param.get(&params)))
        .collect();
    let at_bounds = problem
        .free
        .iter()
        .zip(&best.z)
        .filter(|(f, &z)| {
            let z = if z == 0.0 || z == 1.0 {
                z
            } else {
                f.unit_of(f.value_at(z))
            };
            z <= 1e-6 || z >= 1.0 - 1e-6
        })
        .map(|(f, _)| f.param)
        .collect();
    let mut result = FitResult {
        params,
        values,
        scale: 10f64.powf(log_scale),
        residual: sse.sqrt(),
        sensitivities: vec![],
        iterations,
        converged: best.converged,
        at_bounds,
        spans_threshold,
    };
    result.sensitivities = sensitivity(&result, problem);
    Ok(result)
}
