//! Pulsed large-signal response: rise and fall times, pump sweeps and the
//! resulting modulation-rate band.

use rayon::prelude::*;
use thiserror::Error;

use crate::fitting::{fit_exponential, FitError};
use crate::integrator::{integrate, IntegrateError, IntegrationConfig, Trajectory};
use crate::model::{LaserState, SimParams};
use crate::pump::PumpWaveform;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error("integration failed: {0}")]
    Integrate(#[from] IntegrateError),
    #[error("pulse response needs a Gaussian pulse train")]
    NotAPulseTrain,
    #[error("no output peak found")]
    PeakNotFound,
    #[error("no output above zero")]
    NoOutput,
    #[error("fall window too short: {0}")]
    WindowTooShort(String),
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
}

impl From<FitError> for ExperimentError {
    fn from(e: FitError) -> Self {
        ExperimentError::WindowTooShort(e.to_string())
    }
}

/// Rise-time metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiseTime {
    pub pump_peak_time: f64,
    pub output_peak_time: f64,
    /// Output peak minus pump peak.
    pub peak_delay: f64,
    /// 10%-to-90% crossing time of the rising edge, if both crossings exist.
    pub ten_ninety: Option<f64>,
}

/// Exponential tail fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FallTime {
    pub tau: f64,
    pub r2: f64,
    pub window: (f64, f64),
    pub points: usize,
}

/// Start and end of the fall-fit window as fractions of the peak.
pub const FALL_WINDOW: (f64, f64) = (0.8, 0.05);

/// Index of the maximum and its value, refined by a parabola through the
/// neighbouring samples.
fn refined_peak(times: &[f64], y: &[f64]) -> Option<(usize, f64, f64)> {
    let (i, &peak) = y.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    if !(peak > 0.0 && peak.is_finite()) {
        return None;
    }
    let mut t_peak = times[i];
    if i > 0 && i + 1 < y.len() {
        let (y0, y1, y2) = (y[i - 1], y[i], y[i + 1]);
        let denom = y0 - 2.0 * y1 + y2;
        let h = 0.5 * (times[i + 1] - times[i - 1]);
        if denom < 0.0 {
            let shift = 0.5 * (y0 - y2) / denom;
            t_peak += shift.clamp(-0.5, 0.5) * h;
        }
    }
    Some((i, peak, t_peak))
}

/// Time at which `y` last crosses upward through `level` before index `end`.
fn rising_crossing(times: &[f64], y: &[f64], end: usize, level: f64) -> Option<f64> {
    let j = (0..end).rev().find(|&k| y[k] < level)?;
    let (t0, t1, y0, y1) = (times[j], times[j + 1], y[j], y[j + 1]);
    Some(t0 + (level - y0) / (y1 - y0) * (t1 - t0))
}

/// Peak-to-peak delay between pump and output, plus the 10-90% rise.
pub fn rise_time(times: &[f64], output: &[f64], pump: &[f64]) -> Result<RiseTime, ExperimentError> {
    if times.len() != output.len() || times.len() != pump.len() || times.len() < 3 {
        return Err(ExperimentError::InvalidInput(
            "series lengths differ or are too short",
        ));
    }
    let (i_out, peak, t_out) = refined_peak(times, output).ok_or(ExperimentError::PeakNotFound)?;
    let (_, _, t_pump) = refined_peak(times, pump).ok_or(ExperimentError::PeakNotFound)?;
    let ten_ninety = match (
        rising_crossing(times, output, i_out, 0.1 * peak),
        rising_crossing(times, output, i_out, 0.9 * peak),
    ) {
        (Some(a), Some(b)) => Some(b - a),
        _ => None,
    };
    Ok(RiseTime {
        pump_peak_time: t_pump,
        output_peak_time: t_out,
        peak_delay: t_out - t_pump,
        ten_ninety,
    })
}

/// Decay constant from a log-linear fit of the trailing edge between
/// `start_frac` and `end_frac` of the peak.
pub fn fall_time_window(
    times: &[f64],
    output: &[f64],
    start_frac: f64,
    end_frac: f64,
) -> Result<FallTime, ExperimentError> {
    let (i_pk, peak, _) = refined_peak(times, output).ok_or(ExperimentError::PeakNotFound)?;
    let start = (i_pk..output.len())
        .find(|&k| output[k] <= start_frac * peak)
        .ok_or_else(|| {
            ExperimentError::WindowTooShort("output never falls to the window start".into())
        })?;
    let end = (start..output.len())
        .find(|&k| output[k] < end_frac * peak)
        .ok_or_else(|| {
            ExperimentError::WindowTooShort("output never falls to the window end".into())
        })?;
    let fit = fit_exponential(&times[start..end], &output[start..end], None)?;
    Ok(FallTime {
        tau: fit.tau,
        r2: fit.r2,
        window: (times[start], times[end - 1]),
        points: end - start,
    })
}

pub fn fall_time(times: &[f64], output: &[f64]) -> Result<FallTime, ExperimentError> {
    fall_time_window(times, output, FALL_WINDOW.0, FALL_WINDOW.1)
}

/// Metrics of one response period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseMetrics {
    pub rise: RiseTime,
    pub fall: FallTime,
    /// Fall times with the window start moved to 90% and 70% of the peak.
    pub fall_sensitivity: (Option<f64>, Option<f64>),
    /// Output half-maximum minus pump half-maximum, both on the leading edge.
    pub turn_on_delay: f64,
    pub peak_p: f64,
    /// Photons leaving the cavity per unit volume, `int p / tau_p dt`.
    pub integrated_output: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseResponse {
    /// The analysed period.
    pub trajectory: Trajectory,
    pub pulse_area: f64,
    /// `Err(NoOutput)` for an all-zero response.
    pub metrics: Result<PulseMetrics, ExperimentError>,
}

fn trapezoid(times: &[f64], y: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(y.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

fn metrics_of(tr: &Trajectory) -> Result<PulseMetrics, ExperimentError> {
    let p = tr.photon_density();
    if !p.iter().any(|&v| v > 0.0) {
        return Err(ExperimentError::NoOutput);
    }
    let rise = rise_time(&tr.times, &p, &tr.pump_samples)?;
    let fall = fall_time(&tr.times, &p)?;
    let fall_sensitivity = (
        fall_time_window(&tr.times, &p, 0.9, FALL_WINDOW.1)
            .ok()
            .map(|f| f.tau),
        fall_time_window(&tr.times, &p, 0.7, FALL_WINDOW.1)
            .ok()
            .map(|f| f.tau),
    );
    let (i_out, peak, _) = refined_peak(&tr.times, &p).ok_or(ExperimentError::PeakNotFound)?;
    let (i_pump, pump_peak, _) =
        refined_peak(&tr.times, &tr.pump_samples).ok_or(ExperimentError::PeakNotFound)?;
    let half_out = rising_crossing(&tr.times, &p, i_out, 0.5 * peak).unwrap_or(tr.times[i_out]);
    let half_pump = rising_crossing(&tr.times, &tr.pump_samples, i_pump, 0.5 * pump_peak)
        .unwrap_or(tr.times[i_pump]);
    let integrated_output = trapezoid(&tr.times, &p) / tr.params.tau_p;
    Ok(PulseMetrics {
        rise,
        fall,
        fall_sensitivity,
        turn_on_delay: half_out - half_pump,
        peak_p: peak,
        integrated_output,
    })
}

/// Response to a Gaussian pulse train (or a finite set of pulses).
///
/// For an unbounded train the laser starts at rest, one full period is
/// discarded as warm-up and the metrics are taken on the next period. A
/// finite train is integrated over `[0, rep_period * count]` from rest.
pub fn pulse_response(
    params: &SimParams,
    pulse: &PumpWaveform,
    cfg: &IntegrationConfig,
) -> Result<PulseResponse, ExperimentError> {
    let (period, area, count) = match pulse {
        PumpWaveform::GaussianPulseTrain {
            rep_period,
            area,
            count,
            ..
        } => (*rep_period, *area, *count),
        _ => return Err(ExperimentError::NotAPulseTrain),
    };
    let trajectory = match count {
        None => {
            let warm_cfg = IntegrationConfig {
                output_dt: period,
                ..*cfg
            };
            let warm = integrate(LaserState::ZERO, params, pulse, 0.0, period, &warm_cfg)?;
            integrate(warm.last_state(), params, pulse, period, 2.0 * period, cfg)?
        }
        Some(n) => integrate(
            LaserState::ZERO,
            params,
            pulse,
            0.0,
            period * n.max(1) as f64,
            cfg,
        )?,
    };
    let metrics = metrics_of(&trajectory);
    Ok(PulseResponse {
        trajectory,
        pulse_area: area,
        metrics,
    })
}

/// How a pump multiple of the CW threshold is turned into a pulse area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub fwhm: f64,
    pub rep_period: f64,
    /// Position of the pulse inside each period.
    pub offset: f64,
    /// Pulse area = multiple x threshold rate x this window. Defaults to the
    /// repetition period, i.e. equal average pump rate.
    pub equivalent_window: Option<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            fwhm: 3e-12,
            rep_period: 12.5e-9,
            offset: 20e-12,
            equivalent_window: None,
        }
    }
}

impl SweepConfig {
    pub fn pulse_area(&self, params: &SimParams, multiple: f64) -> f64 {
        multiple
            * params.threshold_rate_estimate()
            * self.equivalent_window.unwrap_or(self.rep_period)
    }

    pub fn waveform(
        &self,
        params: &SimParams,
        multiple: f64,
    ) -> Result<PumpWaveform, ExperimentError> {
        PumpWaveform::pulse_train(
            self.fwhm,
            self.rep_period,
            self.pulse_area(params, multiple),
            self.offset,
        )
        .map_err(|_| ExperimentError::InvalidInput("invalid pulse-train settings"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub multiple: f64,
    pub response: PulseResponse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub params: SimParams,
    pub config: SweepConfig,
}

/// Pulse responses at ascending multiples of the analytic CW threshold,
/// computed concurrently and returned in input order.
pub fn sweep_pump(
    params: &SimParams,
    multiples: &[f64],
    sweep: &SweepConfig,
    cfg: &IntegrationConfig,
) -> Result<SweepResult, ExperimentError> {
    if multiples.is_empty() {
        return Err(ExperimentError::InvalidInput("no pump multiples"));
    }
    if multiples.iter().any(|m| !(m.is_finite() && *m >= 0.0))
        || multiples.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(ExperimentError::InvalidInput(
            "pump multiples must be non-negative and ascending",
        ));
    }
    let points = multiples
        .par_iter()
        .map(|&m| {
            let pulse = sweep.waveform(params, m)?;
            Ok(SweepPoint {
                multiple: m,
                response: pulse_response(params, &pulse, cfg)?,
            })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    Ok(SweepResult {
        points,
        params: *params,
        config: *sweep,
    })
}

/// Large-signal modulation band from the turn-on and turn-off times [Hz].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulationBand {
    /// `1 / (2 (rise + fall))`
    pub conservative: f64,
    /// `1 / (rise + fall)`
    pub optimistic: f64,
}

impl ModulationBand {
    pub fn contains(&self, f: f64) -> bool {
        f >= self.conservative && f <= self.optimistic
    }
}

pub fn modulation_rate_estimate(rise: f64, fall: f64) -> Result<ModulationBand, ExperimentError> {
    if !(rise > 0.0 && fall > 0.0 && rise.is_finite() && fall.is_finite()) {
        return Err(ExperimentError::InvalidInput(
            "rise and fall times must be positive",
        ));
    }
    let total = rise + fall;
    Ok(ModulationBand {
        conservative: 0.5 / total,
        optimistic: 1.0 / total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, dt: f64) -> Vec<f64> {
        (0..n).map(|i| i as f64 * dt).collect()
    }

    fn gaussian(t: f64, c: f64, w: f64) -> f64 {
        (-0.5 * ((t - c) / w).powi(2)).exp()
    }

    #[test]
    fn peak_delay_of_shifted_copy() {
        let t = grid(400, 0.25e-12);
        let pump: Vec<f64> = t.iter().map(|&x| gaussian(x, 20e-12, 1.3e-12)).collect();
        let out: Vec<f64> = t.iter().map(|&x| gaussian(x, 33.5e-12, 4e-12)).collect();
        let r = rise_time(&t, &out, &pump).unwrap();
        assert!((r.peak_delay - 13.5e-12).abs() < 1e-15, "{r:?}");
        let same = rise_time(&t, &pump, &pump).unwrap();
        assert_eq!(same.peak_delay, 0.0);
    }

    #[test]
    fn ten_ninety_of_exponential_rise() {
        let tau = 8e-12;
        let t = grid(4000, 0.05e-12);
        let y: Vec<f64> = t.iter().map(|&x| 1.0 - (-x / tau).exp()).collect();
        let pump: Vec<f64> = t.iter().map(|&x| gaussian(x, 0.0, 1e-12)).collect();
        let r = rise_time(&t, &y, &pump).unwrap();
        let expect = tau * 9f64.ln();
        assert!(
            (r.ten_ninety.unwrap() - expect).abs() < 1e-3 * expect,
            "{r:?}"
        );
    }

    #[test]
    fn fall_of_exact_tail() {
        let t = grid(800, 0.25e-12);
        let y: Vec<f64> = t
            .iter()
            .map(|&x| {
                if x < 10e-12 {
                    x / 10e-12
                } else {
                    (-(x - 10e-12) / 8.5e-12).exp()
                }
            })
            .collect();
        let f = fall_time(&t, &y).unwrap();
        assert!((f.tau - 8.5e-12).abs() < 1e-9 * 8.5e-12, "{f:?}");
        assert!(f.r2 > 0.9999);
    }

    #[test]
    fn short_tail_is_rejected() {
        let t = grid(50, 0.25e-12);
        let y: Vec<f64> = t.iter().map(|&x| gaussian(x, 5e-12, 2e-12)).collect();
        // never falls to 5% within the series
        let cut = &y[..25];
        assert!(matches!(
            fall_time(&t[..25], cut),
            Err(ExperimentError::WindowTooShort(_))
        ));
        assert!(matches!(
            fall_time(&t, &vec![0.0; 50]),
            Err(ExperimentError::PeakNotFound)
        ));
    }

    #[test]
    fn modulation_band() {
        let b = modulation_rate_estimate(13.5e-12, 8.5e-12).unwrap();
        assert!((b.conservative - 22.727e9).abs() < 1e7);
        assert!((b.optimistic - 45.4545e9).abs() < 1e7);
        assert!(b.contains(30e9));
        let f = 17e9;
        let sym = modulation_rate_estimate(1.0 / (2.0 * f), 1.0 / (2.0 * f)).unwrap();
        assert!((sym.optimistic - f).abs() < 1e-6 * f);
        let d = modulation_rate_estimate(27e-12, 17e-12).unwrap();
        assert!((d.optimistic - 0.5 * b.optimistic).abs() < 1e-6 * b.optimistic);
        assert!((d.conservative - 0.5 * b.conservative).abs() < 1e-6 * b.conservative);
        assert!(modulation_rate_estimate(0.0, 1e-12).is_err());
    }

    #[test]
    fn zero_area_pulse_gives_no_output() {
        let params = SimParams::qd_nanocavity();
        let pulse = PumpWaveform::pulse_train(3e-12, 1e-9, 0.0, 20e-12).unwrap();
        let r = pulse_response(&params, &pulse, &IntegrationConfig::default()).unwrap();
        assert!(r.trajectory.states.iter().all(|s| *s == LaserState::ZERO));
        assert_eq!(r.metrics, Err(ExperimentError::NoOutput));
    }

    #[test]
    fn cw_pump_is_not_a_pulse() {
        let params = SimParams::qd_nanocavity();
        let cw = PumpWaveform::Cw { rate: 1e28 };
        assert_eq!(
            pulse_response(&params, &cw, &IntegrationConfig::default()),
            Err(ExperimentError::NotAPulseTrain)
        );
    }

    #[test]
    fn sweep_rejects_unsorted_multiples() {
        let params = SimParams::qd_nanocavity();
        let e = sweep_pump(
            &params,
            &[2.0, 1.0],
            &SweepConfig::default(),
            &IntegrationConfig::default(),
        );
        assert!(matches!(e, Err(ExperimentError::InvalidInput(_))));
    }

    #[test]
    fn average_rate_mapping() {
        let params = SimParams::qd_nanocavity();
        let s = SweepConfig::default();
        let a = s.pulse_area(&params, 5.0);
        assert!((a - 5.0 * params.threshold_rate_estimate() * 12.5e-9).abs() < 1e-6 * a);
        let custom = SweepConfig {
            equivalent_window: Some(300e-12),
            ..s
        };
        assert!(
            (custom.pulse_area(&params, 1.0) - params.threshold_rate_estimate() * 300e-12).abs()
                < 1e6
        );
    }
}
