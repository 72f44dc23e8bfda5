//! Adaptive Dormand-Prince 5(4) integration of the rate equations.
//!
//! The solver advances the rescaled system from [`ScaledModel`], keeps every
//! accepted state non-negative and samples the solution on a uniform output
//! grid by cubic Hermite interpolation between accepted steps.

use thiserror::Error;

use crate::model::{LaserState, ParamError, ScaledModel, Scaling, SimParams};
use crate::pump::PumpWaveform;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrateError {
    #[error("invalid parameters: {0}")]
    InvalidParams(#[from] ParamError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("integration interval must satisfy t1 > t0 (got {t0:e}..{t1:e})")]
    InvalidInterval { t0: f64, t1: f64 },
    #[error("initial state must be finite and non-negative")]
    NegativeInitialState,
    #[error("step size {dt:e} s fell below dt_min at t = {t:e} s")]
    StepSizeUnderflow { t: f64, dt: f64 },
    #[error("exceeded {steps} steps at t = {t:e} s")]
    MaxStepsExceeded { t: f64, steps: usize },
}

/// Step-size and tolerance settings. Times are in seconds; `abs_tol`
/// applies per component in normalized units (1e17 cm^-3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub dt_init: Option<f64>,
    /// Defaults to `tau_p / 5` when unset.
    pub dt_max: Option<f64>,
    pub dt_min: f64,
    pub max_steps: usize,
    /// Spacing of the emitted samples.
    pub output_dt: f64,
    pub scaling: Scaling,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        IntegrationConfig {
            rel_tol: 1e-8,
            abs_tol: 1e-12,
            dt_init: None,
            dt_max: None,
            dt_min: 1e-20,
            max_steps: 50_000_000,
            output_dt: 0.25e-12,
            scaling: Scaling::NORMALIZED,
        }
    }
}

impl IntegrationConfig {
    pub fn validate(&self, params: &SimParams) -> Result<(), IntegrateError> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(IntegrateError::InvalidConfig("tolerances must be positive"));
        }
        if !(self.output_dt > 0.0 && self.output_dt.is_finite()) {
            return Err(IntegrateError::InvalidConfig("output_dt must be positive"));
        }
        let dt_max = self.resolved_dt_max(params);
        if !(self.dt_min > 0.0 && self.dt_min < dt_max) {
            return Err(IntegrateError::InvalidConfig("need 0 < dt_min < dt_max"));
        }
        if self.max_steps == 0 {
            return Err(IntegrateError::InvalidConfig("max_steps must be positive"));
        }
        Ok(())
    }

    pub fn resolved_dt_max(&self, params: &SimParams) -> f64 {
        self.dt_max.unwrap_or(params.tau_p / 5.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    /// Rejections caused by a component dropping below `-abs_tol`.
    pub negativity_rejections: usize,
    /// Accepted steps with a small negative component projected to zero.
    pub projections: usize,
    pub rhs_evals: usize,
    /// Largest interpolation undershoot clipped from an emitted sample, in
    /// scaled units (compare with `abs_tol`).
    pub max_clipped: f64,
}

/// Uniformly sampled solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<LaserState>,
    pub pump_samples: Vec<f64>,
    pub params: SimParams,
    pub stats: StepStats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> LaserState {
        *self
            .states
            .last()
            .expect("trajectory holds at least the initial state")
    }

    pub fn photon_density(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.p).collect()
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
// b - b* (error weights)
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Nominal order of the propagated solution.
pub const METHOD_ORDER: f64 = 5.0;

type Vec3 = [f64; 3];

#[inline]
fn axpy(y: &Vec3, h: f64, terms: &[(f64, &Vec3)]) -> Vec3 {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..3 {
            out[i] += h * c * k[i];
        }
    }
    out
}

/// The system in scaled time and density units.
struct ScaledSystem<'a> {
    model: ScaledModel,
    pump: &'a PumpWaveform,
}

impl ScaledSystem<'_> {
    #[inline]
    fn eval(&self, t: f64, y: &Vec3) -> Vec3 {
        let rate = self.pump.evaluate(t * self.model.scaling.time);
        self.model.rhs(y, self.model.scale_rate(rate))
    }
}

struct StepResult {
    y1: Vec3,
    k7: Vec3,
    err: Vec3,
}

/// One Dormand-Prince step; `k1` is the derivative at `(t, y)`.
fn dopri_step(sys: &ScaledSystem, t: f64, y: &Vec3, k1: &Vec3, h: f64) -> StepResult {
    let k2 = sys.eval(t + C2 * h, &axpy(y, h, &[(A21, k1)]));
    let k3 = sys.eval(t + C3 * h, &axpy(y, h, &[(A31, k1), (A32, &k2)]));
    let k4 = sys.eval(
        t + C4 * h,
        &axpy(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]),
    );
    let k5 = sys.eval(
        t + C5 * h,
        &axpy(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
    );
    let k6 = sys.eval(
        t + h,
        &axpy(
            y,
            h,
            &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
        ),
    );
    let y1 = axpy(
        y,
        h,
        &[(B1, k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
    );
    let k7 = sys.eval(t + h, &y1);
    let mut err = [0.0; 3];
    for i in 0..3 {
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
    }
    StepResult { y1, k7, err }
}

#[inline]
fn hermite(y0: &Vec3, f0: &Vec3, y1: &Vec3, f1: &Vec3, h: f64, theta: f64) -> Vec3 {
    let t2 = theta * theta;
    let t3 = t2 * theta;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + theta;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i];
    }
    out
}

/// Integrates the rate equations from `state0` at `t0` to `t1` [s].
pub fn integrate(
    state0: LaserState,
    params: &SimParams,
    pump: &PumpWaveform,
    t0: f64,
    t1: f64,
    cfg: &IntegrationConfig,
) -> Result<Trajectory, IntegrateError> {
    params.validate_integrable()?;
    cfg.validate(params)?;
    if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
        return Err(IntegrateError::InvalidInterval { t0, t1 });
    }
    if !state0.is_physical() {
        return Err(IntegrateError::NegativeInitialState);
    }

    let scaling = cfg.scaling;
    let ts = scaling.time;
    let sys = ScaledSystem {
        model: ScaledModel::new(params, scaling),
        pump,
    };
    let atol = cfg.abs_tol * Scaling::NORMALIZED.density / scaling.density;
    let rtol = cfg.rel_tol;
    let dt_max = cfg.resolved_dt_max(params) / ts;
    let dt_min = cfg.dt_min / ts;
    let out_dt = cfg.output_dt / ts;
    let (t_start, t_end) = (t0 / ts, t1 / ts);

    let n_out = ((t_end - t_start) / out_dt * (1.0 - 1e-12)).ceil() as usize;
    let mut times = Vec::with_capacity(n_out + 1);
    let mut states = Vec::with_capacity(n_out + 1);
    let emit = |t_scaled: f64,
                y: &Vec3,
                times: &mut Vec<f64>,
                states: &mut Vec<LaserState>,
                clipped: &mut f64| {
        for v in y {
            *clipped = clipped.max(-v);
        }
        let clamped = [y[0].max(0.0), y[1].max(0.0), y[2].max(0.0)];
        times.push(t_scaled * ts);
        states.push(sys.model.to_physical(&clamped));
    };

    let mut stats = StepStats::default();
    let mut t = t_start;
    let mut y = sys.model.to_scaled(&state0);
    let mut f = sys.eval(t, &y);
    stats.rhs_evals += 1;
    emit(t, &y, &mut times, &mut states, &mut stats.max_clipped);
    let mut next_out = 1usize;

    let mut h = cfg
        .dt_init
        .map(|d| d / ts)
        .unwrap_or(0.1 * dt_max)
        .min(dt_max);
    let mut last_rejected = false;

    while t < t_end {
        if stats.accepted + stats.rejected >= cfg.max_steps {
            return Err(IntegrateError::MaxStepsExceeded {
                t: t * ts,
                steps: cfg.max_steps,
            });
        }
        if h < dt_min {
            return Err(IntegrateError::StepSizeUnderflow {
                t: t * ts,
                dt: h * ts,
            });
        }
        let mut step = h.min(dt_max);
        step = cap_near_pulses(pump, t * ts, step * ts) / ts;
        let clipped = t + step >= t_end;
        if clipped {
            step = t_end - t;
        }

        let res = dopri_step(&sys, t, &y, &f, step);
        stats.rhs_evals += 6;

        let mut norm = 0.0;
        for i in 0..3 {
            let sc = atol + rtol * y[i].abs().max(res.y1[i].abs());
            norm += (res.err[i] / sc).powi(2);
        }
        let norm = (norm / 3.0).sqrt();

        if !norm.is_finite() || norm > 1.0 {
            stats.rejected += 1;
            let fac = if norm.is_finite() {
                (0.9 * norm.powf(-0.2)).max(0.2)
            } else {
                0.2
            };
            h = step * fac.min(1.0);
            last_rejected = true;
            continue;
        }
        if res.y1.iter().any(|&v| v < -atol) {
            stats.rejected += 1;
            stats.negativity_rejections += 1;
            h = 0.5 * step;
            last_rejected = true;
            continue;
        }

        let mut y1 = res.y1;
        let mut f1 = res.k7;
        if y1.iter().any(|&v| v < 0.0) {
            for v in y1.iter_mut() {
                *v = v.max(0.0);
            }
            f1 = sys.eval(t + step, &y1);
            stats.rhs_evals += 1;
            stats.projections += 1;
        }

        let t_new = if clipped { t_end } else { t + step };
        // dense output on the uniform grid
        while next_out <= n_out {
            let t_out = if next_out == n_out {
                t_end
            } else {
                t_start + next_out as f64 * out_dt
            };
            if t_out > t_new {
                break;
            }
            let y_out = if t_out == t_new {
                y1
            } else {
                hermite(&y, &f, &y1, &f1, step, (t_out - t) / step)
            };
            emit(
                t_out,
                &y_out,
                &mut times,
                &mut states,
                &mut stats.max_clipped,
            );
            next_out += 1;
        }

        stats.accepted += 1;
        t = t_new;
        y = y1;
        f = f1;

        let mut fac = if norm == 0.0 {
            5.0
        } else {
            (0.9 * norm.powf(-0.2)).clamp(0.2, 5.0)
        };
        if last_rejected {
            fac = fac.min(1.0);
        }
        last_rejected = false;
        if !clipped {
            h = step * fac;
        }
    }

    let pump_samples = times.iter().map(|&t| pump.evaluate(t)).collect();
    Ok(Trajectory {
        times,
        states,
        pump_samples,
        params: *params,
        stats,
    })
}

/// Limits the step to `fwhm / 8` when `[t, t + dt]` comes within four FWHM
/// of a pulse center.
fn cap_near_pulses(pump: &PumpWaveform, t: f64, dt: f64) -> f64 {
    let mut capped = dt;
    for probe in [t, t + dt] {
        if let Some((center, fwhm)) = pump.nearest_pulse(probe) {
            let window = 4.0 * fwhm;
            if t < center + window && t + dt > center - window {
                capped = capped.min(fwhm / 8.0);
            }
        }
    }
    capped
}

/// Fixed-step Dormand-Prince propagation, used for order measurements.
pub fn integrate_fixed(
    state0: LaserState,
    params: &SimParams,
    pump: &PumpWaveform,
    t0: f64,
    t1: f64,
    steps: usize,
    scaling: Scaling,
) -> LaserState {
    let sys = ScaledSystem {
        model: ScaledModel::new(params, scaling),
        pump,
    };
    let h = (t1 - t0) / scaling.time / steps as f64;
    let mut t = t0 / scaling.time;
    let mut y = sys.model.to_scaled(&state0);
    let mut f = sys.eval(t, &y);
    for _ in 0..steps {
        let res = dopri_step(&sys, t, &y, &f, h);
        t += h;
        y = res.y1;
        f = res.k7;
    }
    sys.model.to_physical(&y)
}

/// Observed order of accuracy from fixed-step runs at `h`, `h/2`, `h/4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceReport {
    pub errors: [f64; 3],
    /// `log2(e(h)/e(h/2))` and `log2(e(h/2)/e(h/4))`.
    pub ratios: [f64; 2],
    pub order: f64,
}

/// Source-free photon decay `p(t) = p0 exp(-t/tau_p)` with gain and
/// spontaneous coupling removed, integrated over five photon lifetimes
/// starting from 10, 20 and 40 steps.
pub fn measure_convergence_order(scaling: Scaling) -> ConvergenceReport {
    let params = SimParams {
        g0: 0.0,
        n_tr: 0.0,
        beta: 0.0,
        ..SimParams::qd_nanocavity()
    };
    let p0 = 1e16;
    let span = 5.0 * params.tau_p;
    let pump = PumpWaveform::Cw { rate: 0.0 };
    let exact = p0 * (-span / params.tau_p).exp();
    let mut errors = [0.0; 3];
    for (i, steps) in [10usize, 20, 40].into_iter().enumerate() {
        let end = integrate_fixed(
            LaserState::new(0.0, 0.0, p0),
            &params,
            &pump,
            0.0,
            span,
            steps,
            scaling,
        );
        errors[i] = ((end.p - exact) / exact).abs();
    }
    let ratios = [
        (errors[0] / errors[1]).log2(),
        (errors[1] / errors[2]).log2(),
    ];
    ConvergenceReport {
        errors,
        ratios,
        order: ratios[1],
    }
}
