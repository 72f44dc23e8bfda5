//! Pump-rate waveforms `R_p(t)` and optical-power calibration.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PumpError {
    #[error("{0} must be strictly positive")]
    NonPositive(&'static str),
    #[error("{0} must be finite and non-negative")]
    Negative(&'static str),
    #[error("repetition period must exceed the pulse FWHM")]
    PeriodTooShort,
    #[error("tabulated pump times must be strictly increasing (sample {0})")]
    UnsortedTable(usize),
    #[error("absorption efficiency must lie in (0, 1], got {0}")]
    BadEfficiency(f64),
}

/// Truncation radius for the pulse-train sum, in FWHM.
const TRUNCATION_FWHM: f64 = 8.0;

/// FWHM to standard deviation for a Gaussian.
pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
}

/// Peak of a Gaussian pulse with the given integral and FWHM.
pub fn gaussian_peak(area: f64, fwhm: f64) -> f64 {
    area / (fwhm * (std::f64::consts::PI / (4.0 * std::f64::consts::LN_2)).sqrt())
}

/// Time-dependent pump rate [cm^-3 s^-1].
#[derive(Debug, Clone, PartialEq)]
pub enum PumpWaveform {
    Cw {
        rate: f64,
    },
    /// Gaussian pulses centered at `offset + k * rep_period`. With
    /// `count: None` the train extends over all integer `k`; otherwise
    /// `k = 0..count`.
    GaussianPulseTrain {
        fwhm: f64,
        rep_period: f64,
        /// Integrated pump per pulse [cm^-3].
        area: f64,
        offset: f64,
        count: Option<u32>,
    },
    /// Piecewise-linear samples `(t [s], rate)`, zero outside the table.
    Tabulated {
        table: Vec<(f64, f64)>,
    },
}

impl PumpWaveform {
    pub fn cw(rate: f64) -> Result<Self, PumpError> {
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(PumpError::Negative("cw rate"));
        }
        Ok(PumpWaveform::Cw { rate })
    }

    pub fn pulse_train(
        fwhm: f64,
        rep_period: f64,
        area: f64,
        offset: f64,
    ) -> Result<Self, PumpError> {
        let w = PumpWaveform::GaussianPulseTrain {
            fwhm,
            rep_period,
            area,
            offset,
            count: None,
        };
        w.validate()?;
        Ok(w)
    }

    /// One pulse at `center`; `window` is the span a response to it is
    /// observed over and must exceed the FWHM.
    pub fn single_pulse(fwhm: f64, area: f64, center: f64, window: f64) -> Result<Self, PumpError> {
        let w = PumpWaveform::GaussianPulseTrain {
            fwhm,
            rep_period: window,
            area,
            offset: center,
            count: Some(1),
        };
        w.validate()?;
        Ok(w)
    }

    pub fn tabulated(table: Vec<(f64, f64)>) -> Result<Self, PumpError> {
        let w = PumpWaveform::Tabulated { table };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), PumpError> {
        match self {
            PumpWaveform::Cw { rate } => {
                if !(rate.is_finite() && *rate >= 0.0) {
                    return Err(PumpError::Negative("cw rate"));
                }
            }
            PumpWaveform::GaussianPulseTrain {
                fwhm,
                rep_period,
                area,
                offset,
                ..
            } => {
                if !(fwhm.is_finite() && *fwhm > 0.0) {
                    return Err(PumpError::NonPositive("pulse fwhm"));
                }
                if !(rep_period.is_finite() && *rep_period > 0.0) {
                    return Err(PumpError::NonPositive("repetition period"));
                }
                if rep_period <= fwhm {
                    return Err(PumpError::PeriodTooShort);
                }
                if !(area.is_finite() && *area >= 0.0) {
                    return Err(PumpError::Negative("pulse area"));
                }
                if !offset.is_finite() {
                    return Err(PumpError::Negative("pulse offset"));
                }
            }
            PumpWaveform::Tabulated { table } => {
                for (i, &(t, r)) in table.iter().enumerate() {
                    if !(t.is_finite() && r.is_finite() && r >= 0.0) {
                        return Err(PumpError::Negative("tabulated rate"));
                    }
                    if i > 0 && t <= table[i - 1].0 {
                        return Err(PumpError::UnsortedTable(i));
                    }
                }
            }
        }
        Ok(())
    }

    /// Pump rate at time `t`.
    pub fn evaluate(&self, t: f64) -> f64 {
        match self {
            PumpWaveform::Cw { rate } => *rate,
            PumpWaveform::GaussianPulseTrain {
                fwhm,
                rep_period,
                area,
                offset,
                count,
            } => {
                let sigma = fwhm_to_sigma(*fwhm);
                let peak = gaussian_peak(*area, *fwhm);
                let reach = TRUNCATION_FWHM * fwhm;
                let (k_lo, k_hi) =
                    pulse_index_range(t - reach, t + reach, *offset, *rep_period, *count);
                let mut sum = 0.0;
                for k in k_lo..=k_hi {
                    let dt = t - (offset + k as f64 * rep_period);
                    if dt.abs() <= reach {
                        let x = dt / sigma;
                        sum += peak * (-0.5 * x * x).exp();
                    }
                }
                sum
            }
            PumpWaveform::Tabulated { table } => interpolate(table, t),
        }
    }

    /// `(center, fwhm)` of the pulse closest to `t`, if any.
    pub fn nearest_pulse(&self, t: f64) -> Option<(f64, f64)> {
        match self {
            PumpWaveform::GaussianPulseTrain {
                fwhm,
                rep_period,
                offset,
                count,
                ..
            } => {
                let mut k = ((t - offset) / rep_period).round() as i64;
                if let Some(n) = count {
                    k = k.clamp(0, (*n as i64 - 1).max(0));
                    if *n == 0 {
                        return None;
                    }
                }
                Some((offset + k as f64 * rep_period, *fwhm))
            }
            _ => None,
        }
    }

    /// Repetition period of a pulse train.
    pub fn period(&self) -> Option<f64> {
        match self {
            PumpWaveform::GaussianPulseTrain { rep_period, .. } => Some(*rep_period),
            _ => None,
        }
    }
}

fn pulse_index_range(lo: f64, hi: f64, offset: f64, period: f64, count: Option<u32>) -> (i64, i64) {
    let mut k_lo = ((lo - offset) / period).floor() as i64;
    let mut k_hi = ((hi - offset) / period).ceil() as i64;
    if let Some(n) = count {
        k_lo = k_lo.max(0);
        k_hi = k_hi.min(n as i64 - 1);
    }
    (k_lo, k_hi)
}

fn interpolate(table: &[(f64, f64)], t: f64) -> f64 {
    let (first, last) = match (table.first(), table.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return 0.0,
    };
    if t < first.0 || t > last.0 {
        return 0.0;
    }
    let i = table.partition_point(|&(ti, _)| ti <= t);
    if i == 0 {
        return first.1;
    }
    if i == table.len() {
        return last.1;
    }
    let (t0, r0) = table[i - 1];
    let (t1, r1) = table[i];
    r0 + (r1 - r0) * (t - t0) / (t1 - t0)
}

/// Conversion from average optical pump power to carriers injected per pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpCalibration {
    pub absorption_efficiency: f64,
    /// [J]
    pub pump_photon_energy: f64,
    /// [cm^3]
    pub excitation_volume: f64,
}

impl PumpCalibration {
    pub fn validate(&self) -> Result<(), PumpError> {
        if !(self.absorption_efficiency > 0.0 && self.absorption_efficiency <= 1.0) {
            return Err(PumpError::BadEfficiency(self.absorption_efficiency));
        }
        if !(self.pump_photon_energy > 0.0 && self.pump_photon_energy.is_finite()) {
            return Err(PumpError::NonPositive("pump photon energy"));
        }
        if !(self.excitation_volume > 0.0 && self.excitation_volume.is_finite()) {
            return Err(PumpError::NonPositive("excitation volume"));
        }
        Ok(())
    }

    /// Average rate [cm^-3 s^-1] back to average optical power [W].
    pub fn rate_to_average_power(&self, rate: f64) -> f64 {
        rate * self.pump_photon_energy * self.excitation_volume / self.absorption_efficiency
    }
}

/// Carriers injected per pulse [cm^-3] for an average pump power [W].
pub fn average_power_to_rate(
    power_avg: f64,
    cal: &PumpCalibration,
    rep_period: f64,
) -> Result<f64, PumpError> {
    cal.validate()?;
    if !(power_avg > 0.0 && power_avg.is_finite()) {
        return Err(PumpError::NonPositive("average power"));
    }
    if !(rep_period > 0.0 && rep_period.is_finite()) {
        return Err(PumpError::NonPositive("repetition period"));
    }
    Ok(power_avg * rep_period * cal.absorption_efficiency
        / (cal.pump_photon_energy * cal.excitation_volume))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const PERIOD: f64 = 12.5e-9;
    const FWHM: f64 = 3e-12;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn cw_is_constant() {
        let w = PumpWaveform::cw(2.5e27).unwrap();
        for t in [-1.0, 0.0, 3.3e-12, 1e-6] {
            assert_eq!(w.evaluate(t), 2.5e27);
        }
    }

    #[test]
    fn pulse_peak_and_tail() {
        let area = 5e20;
        let w = PumpWaveform::pulse_train(FWHM, PERIOD, area, 0.0).unwrap();
        let peak = area / (FWHM * (std::f64::consts::PI / (4.0 * std::f64::consts::LN_2)).sqrt());
        assert!(rel(w.evaluate(0.0), peak) < 1e-14);
        assert!(rel(w.evaluate(3.0 * PERIOD), peak) < 1e-12);
        // half maximum at +-fwhm/2
        assert!(rel(w.evaluate(FWHM / 2.0), peak / 2.0) < 1e-12);
        assert!(w.evaluate(PERIOD / 2.0) < 1e-300 * peak);
    }

    /// Composite Simpson over +-12 FWHM, independent of the truncation.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn pulse_integral_equals_area() {
        let area = 7.3e20;
        let w = PumpWaveform::single_pulse(FWHM, area, 40e-12, 100e-12).unwrap();
        let total = simpson(
            |t| w.evaluate(t),
            40e-12 - 12.0 * FWHM,
            40e-12 + 12.0 * FWHM,
            4000,
        );
        assert!(rel(total, area) < 1e-6, "{total}");
    }

    #[test]
    fn single_pulse_has_no_neighbours() {
        let w = PumpWaveform::single_pulse(FWHM, 1e20, 0.0, 50e-12).unwrap();
        let period = w.period().unwrap();
        assert_eq!(w.evaluate(period), 0.0);
        assert_eq!(w.evaluate(-period), 0.0);
        assert!(w.evaluate(0.0) > 0.0);
    }

    #[test]
    fn tabulated_interpolates_and_vanishes_outside() {
        let w = PumpWaveform::tabulated(vec![(0.0, 0.0), (1e-12, 2.0), (3e-12, 4.0)]).unwrap();
        assert_eq!(w.evaluate(-1e-15), 0.0);
        assert_eq!(w.evaluate(0.5e-12), 1.0);
        assert_eq!(w.evaluate(1e-12), 2.0);
        assert!((w.evaluate(2e-12) - 3.0).abs() < 1e-12);
        assert_eq!(w.evaluate(3e-12), 4.0);
        assert_eq!(w.evaluate(3.1e-12), 0.0);
        assert_eq!(
            PumpWaveform::tabulated(vec![(0.0, 1.0), (0.0, 2.0)]),
            Err(PumpError::UnsortedTable(1))
        );
    }

    #[test]
    fn waveform_validation() {
        assert!(PumpWaveform::pulse_train(0.0, PERIOD, 1.0, 0.0).is_err());
        assert_eq!(
            PumpWaveform::pulse_train(FWHM, FWHM, 1.0, 0.0),
            Err(PumpError::PeriodTooShort)
        );
        assert!(PumpWaveform::pulse_train(FWHM, PERIOD, -1.0, 0.0).is_err());
        assert!(PumpWaveform::cw(-1.0).is_err());
    }

    #[test]
    fn power_calibration_examples() {
        let cal = PumpCalibration {
            absorption_efficiency: 1.0,
            pump_photon_energy: 2.5e-19,
            excitation_volume: 1e-13,
        };
        // 1 uW * 12.5 ns = 1.25e-14 J = 5e4 photons in 1e-13 cm^3
        let a = average_power_to_rate(1e-6, &cal, PERIOD).unwrap();
        assert!(rel(a, 5.0e17) < 1e-12, "{a}");
        let b = average_power_to_rate(2e-6, &cal, PERIOD).unwrap();
        assert!(rel(b, 2.0 * a) < 1e-14);
        let half = PumpCalibration {
            absorption_efficiency: 0.5,
            ..cal
        };
        let c = average_power_to_rate(1e-6, &half, PERIOD).unwrap();
        assert!(rel(c, 2.5e17) < 1e-12);
        assert!(average_power_to_rate(0.0, &cal, PERIOD).is_err());
        assert!(average_power_to_rate(1e-6, &cal, -1.0).is_err());
        let bad = PumpCalibration {
            absorption_efficiency: 1.2,
            ..cal
        };
        assert!(average_power_to_rate(1e-6, &bad, PERIOD).is_err());
        assert!(rel(cal.rate_to_average_power(a / PERIOD), 1e-6) < 1e-12);
    }

    proptest! {
        #[test]
        fn train_is_periodic(k in -3i64..500, frac in -4.0f64..4.0) {
            // times on a 2^-70 s lattice so that t and t + period are exact
            let q = |x: f64| (x * 2f64.powi(70)).round() / 2f64.powi(70);
            let period = q(PERIOD);
            let w = PumpWaveform::pulse_train(FWHM, period, 4e20, q(20e-12)).unwrap();
            let t = q(20e-12) + k as f64 * period + q(frac * FWHM);
            let a = w.evaluate(t);
            let b = w.evaluate(t + period);
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300), "{} vs {}", a, b);
        }

        #[test]
        fn waveforms_are_non_negative(t in -1e-8f64..1e-7) {
            let w = PumpWaveform::pulse_train(FWHM, PERIOD, 4e20, 0.0).unwrap();
            prop_assert!(w.evaluate(t) >= 0.0);
            let tab = PumpWaveform::tabulated(vec![(0.0, 1.0), (5e-8, 0.0)]).unwrap();
            prop_assert!(tab.evaluate(t) >= 0.0);
        }
    }
}
