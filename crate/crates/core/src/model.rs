//! Three-level quantum-dot laser rate equations.
//!
//! Carriers are pumped into a wetting layer (`n_w`), captured into the dot
//! ground state (`n_g`) and feed a single lasing mode (`p`). All public
//! quantities use seconds and cm^-3; the integrator works in a rescaled copy
//! of the system (see [`Scaling`]).

use thiserror::Error;

/// Speed of light in vacuum [m/s].
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("lifetimes strictly positive: {name} = {value}")]
    NonPositiveLifetime { name: &'static str, value: f64 },
    #[error("{name} must lie in (0, 1], got {value}")]
    OutOfUnitInterval { name: &'static str, value: f64 },
    #[error("{name} must be strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} is not finite")]
    NotFinite { name: &'static str },
    #[error(
        "tau_p = {tau_p:e} s is inconsistent with Q/lambda (expected {expected:e} s within 1%)"
    )]
    InconsistentPhotonLifetime { tau_p: f64, expected: f64 },
}

/// Rate-equation and gain-model constants.
///
/// Lifetimes are in seconds, densities in cm^-3 and `g0` in cm^3 s^-1.
/// `tau_nr = f64::INFINITY` switches nonradiative recombination off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    pub tau_sp: f64,
    pub tau_nr: f64,
    pub tau_w: f64,
    pub tau_c: f64,
    pub tau_p: f64,
    pub gamma: f64,
    pub beta: f64,
    pub g0: f64,
    pub n_tr: f64,
    pub q_factor: Option<f64>,
    pub lambda_nm: Option<f64>,
}

/// Emission wavelength assumed when converting Q to a photon lifetime.
pub const DEFAULT_LAMBDA_NM: f64 = 950.0;

impl SimParams {
    /// Photonic-crystal cavity constants (Purcell-shortened dot lifetime).
    pub fn qd_nanocavity() -> Self {
        SimParams {
            tau_sp: 300e-12,
            tau_nr: f64::INFINITY,
            tau_w: 100e-12,
            tau_c: 10e-12,
            tau_p: 1.5e-12,
            gamma: 0.028,
            beta: 0.2,
            g0: 8.13e-6,
            n_tr: 3.22e17,
            q_factor: Some(3000.0),
            lambda_nm: Some(DEFAULT_LAMBDA_NM),
        }
    }

    /// Same cavity with the bulk (uncoupled) dot lifetime.
    pub fn bulk_lifetime() -> Self {
        SimParams {
            tau_sp: 2.5e-9,
            ..Self::qd_nanocavity()
        }
    }

    /// Looks up a named preset.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "qd-nanocavity" => Some(Self::qd_nanocavity()),
            "bulk-lifetime" => Some(Self::bulk_lifetime()),
            _ => None,
        }
    }

    pub const PRESET_NAMES: [&'static str; 2] = ["qd-nanocavity", "bulk-lifetime"];

    /// 1/tau_nr, zero for the infinite sentinel.
    pub fn nonradiative_rate(&self) -> f64 {
        if self.tau_nr.is_infinite() {
            0.0
        } else {
            1.0 / self.tau_nr
        }
    }

    /// Checks every physical invariant of the parameter set.
    pub fn validate(&self) -> Result<(), ParamError> {
        self.check_finite()?;
        for (name, value) in self.lifetimes() {
            if !(value > 0.0) {
                return Err(ParamError::NonPositiveLifetime { name, value });
            }
        }
        for (name, value) in [("gamma", self.gamma), ("beta", self.beta)] {
            if !(value > 0.0 && value <= 1.0) {
                return Err(ParamError::OutOfUnitInterval { name, value });
            }
        }
        for (name, value) in [("g0", self.g0), ("n_tr", self.n_tr)] {
            if !(value > 0.0) {
                return Err(ParamError::NonPositive { name, value });
            }
        }
        if let Some(q) = self.q_factor {
            if !(q > 0.0) {
                return Err(ParamError::NonPositive {
                    name: "q_factor",
                    value: q,
                });
            }
        }
        if let Some(l) = self.lambda_nm {
            if !(l > 0.0) {
                return Err(ParamError::NonPositive {
                    name: "lambda_nm",
                    value: l,
                });
            }
        }
        if let (Some(q), Some(l)) = (self.q_factor, self.lambda_nm) {
            let expected = tau_p_from_q(q, l);
            if ((self.tau_p - expected) / expected).abs() > 0.01 {
                return Err(ParamError::InconsistentPhotonLifetime {
                    tau_p: self.tau_p,
                    expected,
                });
            }
        }
        Ok(())
    }

    /// Weaker check used by the integrator: lifetimes positive, coefficients
    /// non-negative. Allows zeroed gain or spontaneous coupling for
    /// diagnostic runs.
    pub fn validate_integrable(&self) -> Result<(), ParamError> {
        self.check_finite()?;
        for (name, value) in self.lifetimes() {
            if !(value > 0.0) {
                return Err(ParamError::NonPositiveLifetime { name, value });
            }
        }
        for (name, value) in [
            ("gamma", self.gamma),
            ("beta", self.beta),
            ("g0", self.g0),
            ("n_tr", self.n_tr),
        ] {
            if value < 0.0 {
                return Err(ParamError::NonPositive { name, value });
            }
        }
        Ok(())
    }

    fn lifetimes(&self) -> [(&'static str, f64); 5] {
        [
            ("tau_sp", self.tau_sp),
            ("tau_nr", self.tau_nr),
            ("tau_w", self.tau_w),
            ("tau_c", self.tau_c),
            ("tau_p", self.tau_p),
        ]
    }

    fn check_finite(&self) -> Result<(), ParamError> {
        let fields = [
            ("tau_sp", self.tau_sp),
            ("tau_w", self.tau_w),
            ("tau_c", self.tau_c),
            ("tau_p", self.tau_p),
            ("gamma", self.gamma),
            ("beta", self.beta),
            ("g0", self.g0),
            ("n_tr", self.n_tr),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(ParamError::NotFinite { name });
            }
        }
        if self.tau_nr.is_nan() || self.tau_nr == f64::NEG_INFINITY {
            return Err(ParamError::NotFinite { name: "tau_nr" });
        }
        Ok(())
    }

    /// Dot density at which modal gain balances cavity loss.
    pub fn clamp_density(&self) -> f64 {
        self.n_tr + threshold_gain(self) / self.g0
    }

    /// Analytic CW threshold pump rate: the clamp density sustained by
    /// spontaneous decay, divided by the fraction of wetting-layer carriers
    /// that reach the dots.
    pub fn threshold_rate_estimate(&self) -> f64 {
        self.clamp_density()
            * (1.0 / self.tau_sp + self.nonradiative_rate())
            * (1.0 + self.tau_c / self.tau_w)
    }
}

impl Default for SimParams {
    fn default() -> Self {
        Self::qd_nanocavity()
    }
}

/// Instantaneous densities [cm^-3].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LaserState {
    pub n_w: f64,
    pub n_g: f64,
    pub p: f64,
}

impl LaserState {
    pub const ZERO: LaserState = LaserState {
        n_w: 0.0,
        n_g: 0.0,
        p: 0.0,
    };

    pub fn new(n_w: f64, n_g: f64, p: f64) -> Self {
        LaserState { n_w, n_g, p }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.n_w, self.n_g, self.p]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        LaserState {
            n_w: a[0],
            n_g: a[1],
            p: a[2],
        }
    }

    pub fn is_physical(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite() && *v >= 0.0)
    }
}

/// Time derivatives [cm^-3 s^-1].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateDerivative {
    pub dn_w_dt: f64,
    pub dn_g_dt: f64,
    pub dp_dt: f64,
}

impl StateDerivative {
    pub fn to_array(self) -> [f64; 3] {
        [self.dn_w_dt, self.dn_g_dt, self.dp_dt]
    }
}

/// Linear material gain `g0 (n_g - n_tr)` [s^-1]; negative below transparency.
pub fn gain(n_g: f64, params: &SimParams) -> f64 {
    params.g0 * (n_g - params.n_tr)
}

/// Rate-equation right-hand side.
pub fn rhs(state: &LaserState, pump_rate: f64, params: &SimParams) -> StateDerivative {
    let g = gain(state.n_g, params);
    let capture = state.n_w / params.tau_c;
    let spont = state.n_g / params.tau_sp;
    StateDerivative {
        dn_w_dt: pump_rate - state.n_w / params.tau_w - capture,
        dn_g_dt: capture - spont - state.n_g * params.nonradiative_rate() - g * state.p,
        dp_dt: params.gamma * g * state.p + params.gamma * params.beta * spont
            - state.p / params.tau_p,
    }
}

/// Modal gain required to balance cavity loss: `1 / (gamma tau_p)`.
pub fn threshold_gain(params: &SimParams) -> f64 {
    1.0 / (params.gamma * params.tau_p)
}

/// Cavity photon lifetime `Q / omega` for a mode at `lambda_nm`.
pub fn tau_p_from_q(q: f64, lambda_nm: f64) -> f64 {
    q * lambda_nm * 1e-9 / (2.0 * std::f64::consts::PI * SPEED_OF_LIGHT)
}

/// Unit system for integration. Physical values are divided by `time` and
/// `density` respectively.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    pub time: f64,
    pub density: f64,
}

impl Scaling {
    /// Picoseconds and 1e17 cm^-3.
    pub const NORMALIZED: Scaling = Scaling {
        time: 1e-12,
        density: 1e17,
    };
    /// Seconds and cm^-3.
    pub const SI: Scaling = Scaling {
        time: 1.0,
        density: 1.0,
    };
}

/// Rate equations with all constants pre-divided into a chosen unit system.
#[derive(Debug, Clone, Copy)]
pub struct ScaledModel {
    pub scaling: Scaling,
    // rates in 1/time_unit
    inv_tau_w: f64,
    inv_tau_c: f64,
    inv_tau_sp: f64,
    inv_tau_nr: f64,
    inv_tau_p: f64,
    gamma: f64,
    beta: f64,
    // gain coefficient in 1/(density_unit time_unit)
    g0: f64,
    n_tr: f64,
}

impl ScaledModel {
    pub fn new(params: &SimParams, scaling: Scaling) -> Self {
        let ts = scaling.time;
        ScaledModel {
            scaling,
            inv_tau_w: ts / params.tau_w,
            inv_tau_c: ts / params.tau_c,
            inv_tau_sp: ts / params.tau_sp,
            inv_tau_nr: ts * params.nonradiative_rate(),
            inv_tau_p: ts / params.tau_p,
            gamma: params.gamma,
            beta: params.beta,
            g0: params.g0 * scaling.density * ts,
            n_tr: params.n_tr / scaling.density,
        }
    }

    /// Converts a pump rate [cm^-3 s^-1] into scaled units.
    #[inline]
    pub fn scale_rate(&self, rate: f64) -> f64 {
        rate * self.scaling.time / self.scaling.density
    }

    #[inline]
    pub fn to_scaled(&self, s: &LaserState) -> [f64; 3] {
        let d = self.scaling.density;
        [s.n_w / d, s.n_g / d, s.p / d]
    }

    #[inline]
    pub fn to_physical(&self, y: &[f64; 3]) -> LaserState {
        let d = self.scaling.density;
        LaserState::new(y[0] * d, y[1] * d, y[2] * d)
    }

    /// Right-hand side in scaled units; `pump` is already scaled.
    #[inline]
    pub fn rhs(&self, y: &[f64; 3], pump: f64) -> [f64; 3] {
        let [n_w, n_g, p] = *y;
        let g = self.g0 * (n_g - self.n_tr);
        let capture = n_w * self.inv_tau_c;
        let spont = n_g * self.inv_tau_sp;
        [
            pump - n_w * (self.inv_tau_w + self.inv_tau_c),
            capture - spont - n_g * self.inv_tau_nr - g * p,
            self.gamma * g * p + self.gamma * self.beta * spont - p * self.inv_tau_p,
        ]
    }
}
