//! CW fixed points, light-in/light-out curves and threshold extraction.

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{LaserState, ParamError, SimParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SteadyError {
    #[error("invalid parameters: {0}")]
    InvalidParams(#[from] ParamError),
    #[error("pump rate must be finite and non-negative, got {0:e}")]
    InvalidPump(f64),
    #[error("no physical steady state at pump rate {pump:e} cm^-3 s^-1")]
    NoPhysicalRoot { pump: f64 },
    #[error("pump grid must be strictly ascending and non-negative (index {0})")]
    BadGrid(usize),
    #[error("curve too sparse: {decades:.2} decades at {per_decade:.1} points/decade (need >= 3 and >= 20)")]
    CurveTooSparse { decades: f64, per_decade: f64 },
}

/// Residual of the dot-population balance written in the gap `u = n_clamp - n_g`
/// and multiplied through by `u`. The photon density has been eliminated
/// with `p = beta n_g / (tau_sp g0 u)`, which is positive exactly on the
/// physical branch `n_g < n_clamp`.
#[derive(Debug, Clone, Copy)]
struct GapResidual {
    capture_flux: f64,
    decay_rate: f64,
    beta_over_tau_sp: f64,
    n_clamp: f64,
    n_tr: f64,
}

impl GapResidual {
    fn new(params: &SimParams, capture_flux: f64) -> Self {
        GapResidual {
            capture_flux,
            decay_rate: 1.0 / params.tau_sp + params.nonradiative_rate(),
            beta_over_tau_sp: params.beta / params.tau_sp,
            n_clamp: params.clamp_density(),
            n_tr: params.n_tr,
        }
    }

    /// Value and derivative with respect to `u`.
    fn eval(&self, u: f64) -> (f64, f64) {
        let n_g = self.n_clamp - u;
        let f = u * (self.capture_flux - self.decay_rate * n_g)
            - self.beta_over_tau_sp * n_g * (n_g - self.n_tr);
        // d n_g / du = -1
        let df = (self.capture_flux - self.decay_rate * n_g)
            + u * self.decay_rate
            + self.beta_over_tau_sp * (2.0 * n_g - self.n_tr);
        (f, df)
    }
}

/// Steady state under a constant pump rate [cm^-3 s^-1].
pub fn solve_steady(params: &SimParams, pump_rate: f64) -> Result<LaserState, SteadyError> {
    params.validate()?;
    if !(pump_rate.is_finite() && pump_rate >= 0.0) {
        return Err(SteadyError::InvalidPump(pump_rate));
    }
    if pump_rate == 0.0 {
        return Ok(LaserState::ZERO);
    }
    let n_w = pump_rate / (1.0 / params.tau_w + 1.0 / params.tau_c);
    let residual = GapResidual::new(params, n_w / params.tau_c);
    let n_clamp = residual.n_clamp;

    // f(0) < 0 and f(n_clamp) > 0 bracket the single root of the quadratic
    let (mut lo, mut hi) = (0.0, n_clamp);
    let (f_lo, _) = residual.eval(lo);
    let (f_hi, _) = residual.eval(hi);
    if !(f_lo < 0.0 && f_hi > 0.0) {
        return Err(SteadyError::NoPhysicalRoot { pump: pump_rate });
    }

    let mut u = 0.5 * n_clamp;
    for _ in 0..200 {
        let (f, df) = residual.eval(u);
        if f == 0.0 {
            break;
        }
        if f < 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let newton = u - f / df;
        let next = if df > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let done = (next - u).abs() <= 4.0 * f64::EPSILON * u || hi - lo <= 4.0 * f64::EPSILON * hi;
        u = next;
        if done {
            break;
        }
    }
    if !(u > 0.0 && u.is_finite()) {
        return Err(SteadyError::NoPhysicalRoot { pump: pump_rate });
    }
    let n_g = n_clamp - u;
    let p = params.beta * n_g / (params.tau_sp * params.g0 * u);
    Ok(LaserState::new(n_w, n_g, p))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LLPoint {
    pub pump_rate: f64,
    pub p: f64,
    pub n_g: f64,
    pub n_w: f64,
}

/// Steady-state light-in/light-out sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct LLCurve {
    pub points: Vec<LLPoint>,
    pub params: SimParams,
}

impl LLCurve {
    pub fn pumps(&self) -> Vec<f64> {
        self.points.iter().map(|r| r.pump_rate).collect()
    }

    pub fn outputs(&self) -> Vec<f64> {
        self.points.iter().map(|r| r.p).collect()
    }

    /// `(log10 pump, log10 p)` for every point with both values positive.
    pub fn log_log(&self) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .filter(|r| r.pump_rate > 0.0 && r.p > 0.0)
            .map(|r| (r.pump_rate.log10(), r.p.log10()))
            .collect()
    }

    /// Centered-difference log-log slopes at the interior points of
    /// [`LLCurve::log_log`], paired with their log10 pump.
    pub fn log_log_slopes(&self) -> Vec<(f64, f64)> {
        centered_slopes(&self.log_log())
    }
}

/// Steady states over `pump_grid`, computed in parallel.
pub fn ll_curve(params: &SimParams, pump_grid: &[f64]) -> Result<LLCurve, SteadyError> {
    params.validate()?;
    for (i, w) in pump_grid.iter().enumerate() {
        if !(w.is_finite() && *w >= 0.0) || (i > 0 && *w <= pump_grid[i - 1]) {
            return Err(SteadyError::BadGrid(i));
        }
    }
    let points = pump_grid
        .par_iter()
        .map(|&r| {
            solve_steady(params, r).map(|s| LLPoint {
                pump_rate: r,
                p: s.p,
                n_g: s.n_g,
                n_w: s.n_w,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LLCurve {
        points,
        params: *params,
    })
}

/// Log-spaced grid between `lo` and `hi` with `per_decade` points per decade
/// (both ends included).
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    let n = ((b - a) * per_decade as f64).round().max(1.0) as usize;
    (0..=n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / n as f64))
        .collect()
}

/// Default sweep: 40 points/decade from 1e-3 to 1e3 times the analytic
/// threshold estimate.
pub fn auto_grid(params: &SimParams) -> Vec<f64> {
    let r = params.threshold_rate_estimate();
    log_grid(1e-3 * r, 1e3 * r, 40)
}

/// Threshold read off a log-log L-L curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdEstimate {
    /// Pump rate at the steepest point of the log-log curve; `None` when the
    /// curve has no kink.
    pub threshold: Option<f64>,
    pub max_slope: f64,
    /// Pump rate where the log-log curvature peaks (the lower corner of the
    /// transition).
    pub max_curvature_pump: f64,
    /// x-intercept of a straight line through the linear-scale points between
    /// 2x and 10x threshold.
    pub linear_intercept: Option<f64>,
    pub degenerate: bool,
}

/// A kink smaller than this excess slope counts as thresholdless.
pub const MIN_KINK_SLOPE_EXCESS: f64 = 0.05;

fn centered_slopes(xy: &[(f64, f64)]) -> Vec<(f64, f64)> {
    xy.windows(3)
        .map(|w| (w[1].0, (w[2].1 - w[0].1) / (w[2].0 - w[0].0)))
        .collect()
}

pub fn extract_threshold(curve: &LLCurve) -> Result<ThresholdEstimate, SteadyError> {
    let xy = curve.log_log();
    let decades = match (xy.first(), xy.last()) {
        (Some(a), Some(b)) => b.0 - a.0,
        _ => 0.0,
    };
    let per_decade = if decades > 0.0 {
        (xy.len() - 1) as f64 / decades
    } else {
        0.0
    };
    if decades < 3.0 - 1e-9 || per_decade < 20.0 - 1e-9 {
        return Err(SteadyError::CurveTooSparse {
            decades,
            per_decade,
        });
    }

    let slopes = centered_slopes(&xy);
    let max_slope = slopes.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let baseline = slopes[0].1.min(slopes[slopes.len() - 1].1);
    let degenerate = max_slope - baseline < MIN_KINK_SLOPE_EXCESS;

    // first point attaining the maximum, refined by a parabola when the
    // maximum is isolated and by the half-rise crossing when it is a plateau
    let at_max = |k: usize| slopes[k].1 >= max_slope - 1e-9;
    let i = (0..slopes.len()).find(|&k| at_max(k)).unwrap_or(0);
    let mut log_thr = slopes[i].0;
    if i > 0 && i + 1 < slopes.len() {
        let (x0, y0) = slopes[i - 1];
        let (x1, y1) = slopes[i];
        let (x2, y2) = slopes[i + 1];
        if at_max(i + 1) {
            let half = 0.5 * (slopes[0].1 + max_slope);
            if let Some(j) = (0..i).rev().find(|&k| slopes[k].1 < half) {
                let (xa, ya) = slopes[j];
                let (xb, yb) = slopes[j + 1];
                log_thr = xa + (half - ya) / (yb - ya) * (xb - xa);
            }
        } else if y1 > y0 + 1e-9 && y1 > y2 + 1e-9 {
            let d1 = (y1 - y0) / (x1 - x0);
            let d2 = (y2 - y1) / (x2 - x1);
            let curv = (d2 - d1) / (x2 - x0);
            if curv < 0.0 {
                let vertex = 0.5 * (x0 + x1) - d1 / (2.0 * curv);
                if vertex > x0 && vertex < x2 {
                    log_thr = vertex;
                }
            }
        }
    }

    let curvature = slopes.windows(2).map(|w| {
        (
            0.5 * (w[0].0 + w[1].0),
            (w[1].1 - w[0].1) / (w[1].0 - w[0].0),
        )
    });
    let (log_curv, _) = curvature.fold((slopes[0].0, f64::NEG_INFINITY), |best, c| {
        if c.1 > best.1 {
            c
        } else {
            best
        }
    });

    let threshold = (!degenerate).then(|| 10f64.powf(log_thr));
    let linear_intercept = threshold.and_then(|thr| linear_intercept(curve, 2.0 * thr, 10.0 * thr));
    Ok(ThresholdEstimate {
        threshold,
        max_slope,
        max_curvature_pump: 10f64.powf(log_curv),
        linear_intercept,
        degenerate,
    })
}

fn linear_intercept(curve: &LLCurve, lo: f64, hi: f64) -> Option<f64> {
    let pts: Vec<_> = curve
        .points
        .iter()
        .filter(|r| r.pump_rate >= lo && r.pump_rate <= hi)
        .map(|r| (r.pump_rate, r.p))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope > 0.0).then(|| mx - my / slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::rhs;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn zero_pump_gives_origin() {
        let s = solve_steady(&SimParams::qd_nanocavity(), 0.0).unwrap();
        assert_eq!(s, LaserState::ZERO);
        let c = ll_curve(&SimParams::qd_nanocavity(), &[0.0]).unwrap();
        assert_eq!(
            c.points,
            vec![LLPoint {
                pump_rate: 0.0,
                p: 0.0,
                n_g: 0.0,
                n_w: 0.0
            }]
        );
    }

    #[test]
    fn wetting_layer_closed_form() {
        let params = SimParams::qd_nanocavity();
        for r in [1e25, 1.2e28, 3e30] {
            let s = solve_steady(&params, r).unwrap();
            assert!(rel(s.n_w, r * 9.0909090909e-12) < 1e-9);
        }
    }

    #[test]
    fn residual_is_tiny_relative_to_terms() {
        let params = SimParams {
            tau_nr: 4e-9,
            ..SimParams::qd_nanocavity()
        };
        for r in log_grid(1e24, 1e32, 4) {
            let s = solve_steady(&params, r).unwrap();
            let d = rhs(&s, r, &params);
            let g = crate::model::gain(s.n_g, &params);
            let scale_w = r.max(s.n_w / params.tau_w).max(s.n_w / params.tau_c);
            let scale_g = (s.n_w / params.tau_c)
                .max(s.n_g / params.tau_sp)
                .max((g * s.p).abs());
            let scale_p = (params.gamma * g * s.p).abs().max(s.p / params.tau_p);
            assert!(d.dn_w_dt.abs() < 1e-10 * scale_w, "{r:e}");
            assert!(
                d.dn_g_dt.abs() < 1e-10 * scale_g,
                "{r:e}: {}",
                d.dn_g_dt / scale_g
            );
            assert!(
                d.dp_dt.abs() < 1e-10 * scale_p,
                "{r:e}: {}",
                d.dp_dt / scale_p
            );
        }
    }

    #[test]
    fn gain_clamps_far_above_threshold() {
        let params = SimParams::qd_nanocavity();
        let s = solve_steady(&params, 1e3 * params.threshold_rate_estimate()).unwrap();
        assert!(s.n_g < 3.2507e18);
        assert!(s.n_g > 0.99 * 3.251e18, "{}", s.n_g);
    }

    #[test]
    fn threshold_estimate_value() {
        let r = SimParams::qd_nanocavity().threshold_rate_estimate();
        assert!(rel(r, 1.19e28) < 5e-3, "{r:e}");
    }

    #[test]
    fn beta_one_is_kinkless() {
        let params = SimParams {
            beta: 1.0,
            ..SimParams::qd_nanocavity()
        };
        let r = params.threshold_rate_estimate();
        let c = ll_curve(&params, &log_grid(r / 100.0, r * 100.0, 40)).unwrap();
        let dev = c
            .log_log_slopes()
            .iter()
            .map(|s| (s.1 - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(dev < 0.05, "{dev}");
        let thr = extract_threshold(&c).unwrap();
        assert!(thr.degenerate);
        assert_eq!(thr.threshold, None);
    }

    #[test]
    fn high_beta_s_curve() {
        let params = SimParams::qd_nanocavity();
        let c = ll_curve(&params, &auto_grid(&params)).unwrap();
        let slopes = c.log_log_slopes();
        let imax = slopes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .unwrap()
            .0;
        assert!(slopes[imax].1 > 1.5);
        assert!(slopes[..imax].iter().any(|s| s.1 < 1.1));
        assert!(slopes[imax..].iter().any(|s| s.1 < 1.1));
        let p = c.outputs();
        assert!(p.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn threshold_of_sharp_synthetic_kink() {
        let kink = 3.7e27;
        let grid = log_grid(1e25, 1e30, 40);
        let points = grid
            .iter()
            .map(|&r| {
                let p = if r < kink {
                    r * 1e-12
                } else {
                    r * r / kink * 1e-12
                };
                LLPoint {
                    pump_rate: r,
                    p,
                    n_g: 0.0,
                    n_w: 0.0,
                }
            })
            .collect();
        let c = LLCurve {
            points,
            params: SimParams::qd_nanocavity(),
        };
        let t = extract_threshold(&c).unwrap();
        let spacing = 1.0 / 40.0;
        assert!(
            (t.threshold.unwrap().log10() - kink.log10()).abs() <= spacing,
            "{t:?}"
        );
        assert!(
            (t.max_curvature_pump.log10() - kink.log10()).abs() <= spacing,
            "{t:?}"
        );
    }

    #[test]
    fn threshold_matches_clamp_oracle() {
        let params = SimParams::qd_nanocavity();
        let c = ll_curve(&params, &auto_grid(&params)).unwrap();
        let t = extract_threshold(&c).unwrap();
        let thr = t.threshold.unwrap();
        assert!(rel(thr, 1.19e28) < 0.25, "{thr:e}");
        assert!(t.max_curvature_pump < thr);
        assert!(t.linear_intercept.unwrap() > 0.0);
    }

    #[test]
    fn sparse_curves_are_rejected() {
        let params = SimParams::qd_nanocavity();
        let c = ll_curve(&params, &log_grid(1e27, 1e29, 40)).unwrap();
        assert!(matches!(
            extract_threshold(&c),
            Err(SteadyError::CurveTooSparse { .. })
        ));
        let c = ll_curve(&params, &log_grid(1e25, 1e31, 10)).unwrap();
        assert!(matches!(
            extract_threshold(&c),
            Err(SteadyError::CurveTooSparse { .. })
        ));
    }

    #[test]
    fn grid_must_ascend() {
        let params = SimParams::qd_nanocavity();
        assert_eq!(ll_curve(&params, &[1.0, 1.0]), Err(SteadyError::BadGrid(1)));
        assert_eq!(ll_curve(&params, &[-1.0]), Err(SteadyError::BadGrid(0)));
    }

    #[test]
    fn jump_across_kink_shrinks_as_beta_grows() {
        // p(a R_th)/p(R_th/a) divided by the linear-response ratio a^2
        let a: f64 = 3.0;
        let mut prev = f64::INFINITY;
        for beta in [0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 0.9, 1.0] {
            let params = SimParams {
                beta,
                ..SimParams::qd_nanocavity()
            };
            let r = params.threshold_rate_estimate();
            let hi = solve_steady(&params, a * r).unwrap().p;
            let lo = solve_steady(&params, r / a).unwrap().p;
            let jump = hi / lo / (a * a);
            assert!(jump < prev, "beta {beta}: {jump} >= {prev}");
            prev = jump;
        }
        assert!((prev - 1.0).abs() < 1e-9, "{prev}");
    }

    #[test]
    fn invalid_inputs() {
        let params = SimParams::qd_nanocavity();
        assert!(matches!(
            solve_steady(&params, -1.0),
            Err(SteadyError::InvalidPump(_))
        ));
        let bad = SimParams {
            beta: 0.0,
            ..params
        };
        assert!(matches!(
            solve_steady(&bad, 1e28),
            Err(SteadyError::InvalidParams(_))
        ));
    }
}
