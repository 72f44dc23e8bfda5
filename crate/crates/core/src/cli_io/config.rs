//! JSON run configuration. Every physical quantity in the document carries
//! its unit in the key name; the resolved [`RunConfig`] holds SI values.
//!
//! Picosecond values are converted by shifting the decimal exponent of the
//! number as written, so a resolved configuration written back out parses
//! to exactly the same doubles.

use std::path::PathBuf;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Number;

use super::CliError;
use crate::experiments::SweepConfig;
use crate::fitting::{FitParam, FitProblem, FreeParam};
use crate::integrator::IntegrationConfig;
use crate::model::{tau_p_from_q, Scaling, SimParams, DEFAULT_LAMBDA_NM};
use crate::pump::{average_power_to_rate, PumpCalibration, PumpWaveform};

/// `value * 10^shift`, computed on the decimal text.
fn shifted_parse(text: &str, shift: i32) -> Option<f64> {
    let (mantissa, exp) = match text.find(['e', 'E']) {
        Some(i) => (&text[..i], text[i + 1..].parse::<i32>().ok()?),
        None => (text, 0),
    };
    format!("{mantissa}e{}", exp + shift).parse().ok()
}

/// Shortest decimal text of `v * 10^shift`, plain when reasonably sized.
fn shifted_text(v: f64, shift: i32) -> String {
    let sci = format!("{v:e}");
    let (mantissa, exp) = sci
        .split_once('e')
        .expect("LowerExp always has an exponent");
    let exp = exp.parse::<i32>().expect("integer exponent") + shift;
    let (sign, mantissa) = mantissa
        .strip_prefix('-')
        .map_or(("", mantissa), |m| ("-", m));
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    if !(-6..=15).contains(&exp) {
        return format!("{sign}{mantissa}e{exp}");
    }
    let point = exp + 1;
    let body = if point <= 0 {
        format!("0.{}{digits}", "0".repeat((-point) as usize))
    } else if point as usize >= digits.len() {
        format!("{digits}{}", "0".repeat(point as usize - digits.len()))
    } else {
        format!(
            "{}.{}",
            &digits[..point as usize],
            &digits[point as usize..]
        )
    };
    format!("{sign}{body}")
}

fn number_to_si(n: &Number, shift: i32) -> Option<f64> {
    shifted_parse(n.as_str(), shift)
}

fn si_to_number(v: f64, shift: i32) -> Number {
    shifted_text(v, -shift)
        .parse()
        .expect("decimal text is a valid JSON number")
}

/// A time written in picoseconds, held in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Picos(pub f64);

impl<'de> Deserialize<'de> for Picos {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let n = Number::deserialize(d)?;
        number_to_si(&n, -12)
            .map(Picos)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid number {n}")))
    }
}

impl Serialize for Picos {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        si_to_number(self.0, -12).serialize(s)
    }
}

fn nullable<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Option<Picos>>, D::Error> {
    Option::<Picos>::deserialize(d).map(Some)
}

/// Parameter overrides; keys left out keep the preset value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_sp_ps: Option<Picos>,
    /// `null` means no nonradiative loss.
    #[serde(
        default,
        deserialize_with = "nullable",
        skip_serializing_if = "Option::is_none"
    )]
    pub tau_nr_ps: Option<Option<Picos>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_w_ps: Option<Picos>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_c_ps: Option<Picos>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_p_ps: Option<Picos>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g0_cm3_per_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_tr_per_cm3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_nm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PumpKind {
    Cw,
    PulseTrain,
    Tabulated,
}

/// Pump waveform. Which keys apply depends on `kind`:
/// `cw` takes `rate_per_cm3_s`; `pulse_train` takes `fwhm_ps`, one of
/// `rep_period_ps`/`rep_mhz`, one of `area_per_cm3`/`average_power_w`
/// (the latter with a `calibration` block), and optional `offset_ps` and
/// `count`; `tabulated` takes `points` as `[t_ps, rate_per_cm3_s]` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpDoc {
    pub kind: PumpKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_per_cm3_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fwhm_ps: Option<Picos>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rep_period_ps: Option<Picos>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rep_mhz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area_per_cm3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub average_power_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset_ps: Option<Picos>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<(Picos, f64)>>,
}

impl PumpDoc {
    fn present(&self) -> Vec<&'static str> {
        let mut v = vec![];
        let mut add = |name, set: bool| {
            if set {
                v.push(name)
            }
        };
        add("rate_per_cm3_s", self.rate_per_cm3_s.is_some());
        add("fwhm_ps", self.fwhm_ps.is_some());
        add("rep_period_ps", self.rep_period_ps.is_some());
        add("rep_mhz", self.rep_mhz.is_some());
        add("area_per_cm3", self.area_per_cm3.is_some());
        add("average_power_w", self.average_power_w.is_some());
        add("offset_ps", self.offset_ps.is_some());
        add("count", self.count.is_some());
        add("points", self.points.is_some());
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationDoc {
    pub absorption_efficiency: f64,
    pub pump_photon_energy_j: f64,
    pub excitation_volume_cm3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeDoc {
    /// A parameter key such as `beta` or `tau_sp_ps`; bounds use its unit.
    pub param: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Number>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Number>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Steady,
    Ll,
    Pulse,
    Sweep,
    Fit,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Steady => "steady",
            ExperimentKind::Ll => "ll",
            ExperimentKind::Pulse => "pulse",
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::Fit => "fit",
        }
    }

    fn allowed(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::Steady => &["rate_per_cm3_s"],
            ExperimentKind::Ll => &["lo_per_cm3_s", "hi_per_cm3_s", "points_per_decade"],
            ExperimentKind::Pulse => &["multiple"],
            ExperimentKind::Sweep => &[
                "multiples",
                "fwhm_ps",
                "rep_period_ps",
                "rep_mhz",
                "offset_ps",
                "equivalent_window_ps",
            ],
            ExperimentKind::Fit => &["data_csv", "free", "restarts", "max_evals"],
        }
    }
}

/// Experiment block. `kind` selects the run; the remaining keys are
/// optional settings of that kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentDoc {
    pub kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_per_cm3_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo_per_cm3_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi_per_cm3_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points_per_decade: Option<usize>,
    /// Multiple of the CW threshold used when no `pump` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multiple: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multiples: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fwhm_ps: Option<Picos>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rep_period_ps: Option<Picos>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rep_mhz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset_ps: Option<Picos>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equivalent_window_ps: Option<Picos>,
    /// Two columns: pump rate [cm^-3 s^-1], output [arb. units].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free: Option<Vec<FreeDoc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_evals: Option<usize>,
}

impl ExperimentDoc {
    pub fn empty(kind: ExperimentKind) -> Self {
        ExperimentDoc {
            kind,
            rate_per_cm3_s: None,
            lo_per_cm3_s: None,
            hi_per_cm3_s: None,
            points_per_decade: None,
            multiple: None,
            multiples: None,
            fwhm_ps: None,
            rep_period_ps: None,
            rep_mhz: None,
            offset_ps: None,
            equivalent_window_ps: None,
            data_csv: None,
            free: None,
            restarts: None,
            max_evals: None,
        }
    }

    fn present(&self) -> Vec<&'static str> {
        let mut v = vec![];
        let mut add = |name, set: bool| {
            if set {
                v.push(name)
            }
        };
        add("rate_per_cm3_s", self.rate_per_cm3_s.is_some());
        add("lo_per_cm3_s", self.lo_per_cm3_s.is_some());
        add("hi_per_cm3_s", self.hi_per_cm3_s.is_some());
        add("points_per_decade", self.points_per_decade.is_some());
        add("multiple", self.multiple.is_some());
        add("multiples", self.multiples.is_some());
        add("fwhm_ps", self.fwhm_ps.is_some());
        add("rep_period_ps", self.rep_period_ps.is_some());
        add("rep_mhz", self.rep_mhz.is_some());
        add("offset_ps", self.offset_ps.is_some());
        add("equivalent_window_ps", self.equivalent_window_ps.is_some());
        add("data_csv", self.data_csv.is_some());
        add("free", self.free.is_some());
        add("restarts", self.restarts.is_some());
        add("max_evals", self.max_evals.is_some());
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingDoc {
    Normalized,
    Si,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
    /// In integration units (1e17 cm^-3 when normalized).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abs_tol_scaled: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_init_ps: Option<Picos>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_max_ps: Option<Picos>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_min_ps: Option<Picos>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dt_ps: Option<Picos>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingDoc>,
}

/// The configuration document as written on disk.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamsDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pump: Option<PumpDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integration: Option<IntegrationDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plots: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Pump grid for an L-L run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LlGrid {
    pub lo: f64,
    pub hi: f64,
    pub per_decade: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Experiment {
    Steady {
        rate: f64,
    },
    Ll {
        grid: LlGrid,
    },
    Pulse {
        pump: PumpWaveform,
    },
    Sweep {
        multiples: Vec<f64>,
        sweep: SweepConfig,
    },
    Fit {
        data_csv: PathBuf,
        free: Vec<FreeParam>,
        restarts: usize,
        max_evals: usize,
    },
}

impl Experiment {
    pub fn kind(&self) -> ExperimentKind {
        match self {
            Experiment::Steady { .. } => ExperimentKind::Steady,
            Experiment::Ll { .. } => ExperimentKind::Ll,
            Experiment::Pulse { .. } => ExperimentKind::Pulse,
            Experiment::Sweep { .. } => ExperimentKind::Sweep,
            Experiment::Fit { .. } => ExperimentKind::Fit,
        }
    }
}

/// A validated run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: SimParams,
    pub experiment: Experiment,
    pub integration: IntegrationConfig,
    pub output_dir: PathBuf,
    pub plots: bool,
    pub seed: u64,
}

pub const DEFAULT_SWEEP_MULTIPLES: [f64; 4] = [1.5, 2.0, 3.0, 5.0];
pub const DEFAULT_PULSE_MULTIPLE: f64 = 5.0;

/// Parses and validates a configuration that must name its experiment.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    resolve(parse_doc(text)?, None)
}

/// Parses a configuration for a subcommand. A missing experiment block is
/// filled with that subcommand's defaults; a different kind is an error.
pub fn parse_config_for(text: &str, kind: ExperimentKind) -> Result<RunConfig, CliError> {
    resolve(parse_doc(text)?, Some(kind))
}

pub fn parse_doc(text: &str) -> Result<ConfigDoc, CliError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let parse_err = |e: serde_json::Error, path: String| CliError::Parse {
        path,
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    };
    let doc: ConfigDoc = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        parse_err(e.into_inner(), path)
    })?;
    de.end().map_err(|e| parse_err(e, ".".into()))?;
    Ok(doc)
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

fn only_allowed(block: &str, present: &[&str], allowed: &[&str]) -> Result<(), CliError> {
    match present.iter().find(|k| !allowed.contains(k)) {
        Some(k) => Err(invalid(format!("`{k}` does not apply to {block}"))),
        None => Ok(()),
    }
}

fn rep_period(period: Option<Picos>, mhz: Option<f64>) -> Result<Option<f64>, CliError> {
    match (period, mhz) {
        (Some(_), Some(_)) => Err(invalid("give either rep_period_ps or rep_mhz, not both")),
        (Some(p), None) => Ok(Some(positive("rep_period_ps", p.0)?)),
        (None, Some(f)) => Ok(Some(1.0 / (positive("rep_mhz", f)? * 1e6))),
        (None, None) => Ok(None),
    }
}

fn resolve_params(doc: &ConfigDoc) -> Result<SimParams, CliError> {
    let over = doc.params.clone().unwrap_or_default();
    let base = match &doc.preset {
        Some(name) => {
            SimParams::preset(name).ok_or_else(|| CliError::UnknownPreset(name.clone()))?
        }
        None => {
            let missing: Vec<&str> = [
                ("tau_sp_ps", over.tau_sp_ps.is_none()),
                ("tau_w_ps", over.tau_w_ps.is_none()),
                ("tau_c_ps", over.tau_c_ps.is_none()),
                (
                    "tau_p_ps",
                    over.tau_p_ps.is_none() && over.q_factor.is_none(),
                ),
                ("gamma", over.gamma.is_none()),
                ("beta", over.beta.is_none()),
                ("g0_cm3_per_s", over.g0_cm3_per_s.is_none()),
                ("n_tr_per_cm3", over.n_tr_per_cm3.is_none()),
            ]
            .into_iter()
            .filter(|m| m.1)
            .map(|m| m.0)
            .collect();
            if !missing.is_empty() {
                return Err(invalid(format!(
                    "without a preset these parameters are required: {}",
                    missing.join(", ")
                )));
            }
            SimParams {
                q_factor: None,
                lambda_nm: None,
                ..SimParams::qd_nanocavity()
            }
        }
    };
    let mut p = base;
    if let Some(v) = over.tau_sp_ps {
        p.tau_sp = v.0;
    }
    if let Some(v) = over.tau_nr_ps {
        p.tau_nr = v.map_or(f64::INFINITY, |v| v.0);
    }
    if let Some(v) = over.tau_w_ps {
        p.tau_w = v.0;
    }
    if let Some(v) = over.tau_c_ps {
        p.tau_c = v.0;
    }
    if let Some(v) = over.gamma {
        p.gamma = v;
    }
    if let Some(v) = over.beta {
        p.beta = v;
    }
    if let Some(v) = over.g0_cm3_per_s {
        p.g0 = v;
    }
    if let Some(v) = over.n_tr_per_cm3 {
        p.n_tr = v;
    }
    if over.lambda_nm.is_some() {
        p.lambda_nm = over.lambda_nm;
    }
    match (over.tau_p_ps, over.q_factor) {
        (Some(tp), q) => {
            p.tau_p = tp.0;
            p.q_factor = q;
        }
        (None, Some(q)) => {
            p.q_factor = Some(q);
            p.tau_p = tau_p_from_q(q, p.lambda_nm.unwrap_or(DEFAULT_LAMBDA_NM));
        }
        (None, None) => {}
    }
    if p.q_factor.is_none() && over.lambda_nm.is_none() {
        p.lambda_nm = None;
    }
    p.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(p)
}

fn resolve_pump(pump: &PumpDoc, cal: Option<&CalibrationDoc>) -> Result<PumpWaveform, CliError> {
    let present = pump.present();
    let w = match pump.kind {
        PumpKind::Cw => {
            only_allowed("a cw pump", &present, &["rate_per_cm3_s"])?;
            let rate = pump
                .rate_per_cm3_s
                .ok_or_else(|| invalid("cw pump needs rate_per_cm3_s"))?;
            PumpWaveform::Cw { rate }
        }
        PumpKind::PulseTrain => {
            only_allowed(
                "a pulse_train pump",
                &present,
                &[
                    "fwhm_ps",
                    "rep_period_ps",
                    "rep_mhz",
                    "area_per_cm3",
                    "average_power_w",
                    "offset_ps",
                    "count",
                ],
            )?;
            let fwhm = pump
                .fwhm_ps
                .ok_or_else(|| invalid("pulse_train needs fwhm_ps"))?
                .0;
            let rep_period = rep_period(pump.rep_period_ps, pump.rep_mhz)?
                .ok_or_else(|| invalid("pulse_train needs rep_period_ps or rep_mhz"))?;
            let area = match (pump.area_per_cm3, pump.average_power_w) {
                (Some(a), None) => a,
                (None, Some(w)) => {
                    let c =
                        cal.ok_or_else(|| invalid("average_power_w needs a calibration block"))?;
                    let cal = PumpCalibration {
                        absorption_efficiency: c.absorption_efficiency,
                        pump_photon_energy: c.pump_photon_energy_j,
                        excitation_volume: c.excitation_volume_cm3,
                    };
                    average_power_to_rate(w, &cal, rep_period)
                        .map_err(|e| invalid(e.to_string()))?
                }
                _ => {
                    return Err(invalid(
                        "pulse_train needs exactly one of area_per_cm3 and average_power_w",
                    ))
                }
            };
            PumpWaveform::GaussianPulseTrain {
                fwhm,
                rep_period,
                area,
                offset: pump
                    .offset_ps
                    .map_or(SweepConfig::default().offset, |o| o.0),
                count: pump.count,
            }
        }
        PumpKind::Tabulated => {
            only_allowed("a tabulated pump", &present, &["points"])?;
            let points = pump
                .points
                .as_ref()
                .ok_or_else(|| invalid("tabulated pump needs points"))?;
            PumpWaveform::Tabulated {
                table: points.iter().map(|(t, r)| (t.0, *r)).collect(),
            }
        }
    };
    w.validate().map_err(|e| invalid(format!("pump: {e}")))?;
    Ok(w)
}

/// Document key and decimal exponent (document to SI) of each fittable parameter.
const PARAM_KEYS: [(FitParam, &str, i32); 9] = [
    (FitParam::Beta, "beta", 0),
    (FitParam::G0, "g0_cm3_per_s", 0),
    (FitParam::NTr, "n_tr_per_cm3", 0),
    (FitParam::TauSp, "tau_sp_ps", -12),
    (FitParam::TauNr, "tau_nr_ps", -12),
    (FitParam::TauW, "tau_w_ps", -12),
    (FitParam::TauC, "tau_c_ps", -12),
    (FitParam::TauP, "tau_p_ps", -12),
    (FitParam::Gamma, "gamma", 0),
];

/// Document key of a fit parameter and the factor from document units to SI.
pub fn param_doc_key(p: FitParam) -> (&'static str, f64) {
    PARAM_KEYS
        .iter()
        .find(|k| k.0 == p)
        .map(|k| (k.1, 10f64.powi(k.2)))
        .expect("every parameter has a key")
}

fn resolve_free(list: &[FreeDoc]) -> Result<Vec<FreeParam>, CliError> {
    list.iter()
        .map(|f| {
            let &(param, _, shift) = PARAM_KEYS
                .iter()
                .find(|k| k.1 == f.param)
                .ok_or_else(|| invalid(format!("unknown fit parameter `{}`", f.param)))?;
            let (lo, hi) = param.default_bounds();
            let conv = |n: &Option<Number>, default: f64| -> Result<f64, CliError> {
                match n {
                    Some(n) => {
                        number_to_si(n, shift).ok_or_else(|| invalid(format!("bad bound {n}")))
                    }
                    None => Ok(default),
                }
            };
            Ok(FreeParam::with_bounds(
                param,
                conv(&f.lower, lo)?,
                conv(&f.upper, hi)?,
            ))
        })
        .collect()
}

fn resolve_experiment(
    doc: &ConfigDoc,
    params: &SimParams,
    wanted: Option<ExperimentKind>,
) -> Result<Experiment, CliError> {
    let exp = match (&doc.experiment, wanted) {
        (Some(e), _) => e.clone(),
        (None, None) => return Err(invalid("exactly one experiment block is required")),
        (None, Some(kind)) => ExperimentDoc::empty(kind),
    };
    if let Some(kind) = wanted {
        if exp.kind != kind {
            return Err(CliError::Usage(format!(
                "config describes a `{}` experiment but `{}` was requested",
                exp.kind.name(),
                kind.name()
            )));
        }
    }
    only_allowed(
        &format!("a {} experiment", exp.kind.name()),
        &exp.present(),
        exp.kind.allowed(),
    )?;
    let pump = doc
        .pump
        .as_ref()
        .map(|p| resolve_pump(p, doc.calibration.as_ref()))
        .transpose()?;
    let r_th = params.threshold_rate_estimate();
    let resolved = match exp.kind {
        ExperimentKind::Steady => {
            let rate = match (exp.rate_per_cm3_s, &pump) {
                (Some(r), _) => r,
                (None, Some(PumpWaveform::Cw { rate })) => *rate,
                _ => return Err(invalid("steady needs rate_per_cm3_s or a cw pump")),
            };
            if !(rate >= 0.0 && rate.is_finite()) {
                return Err(invalid("steady pump rate must be non-negative and finite"));
            }
            Experiment::Steady { rate }
        }
        ExperimentKind::Ll => {
            let grid = LlGrid {
                lo: positive("lo_per_cm3_s", exp.lo_per_cm3_s.unwrap_or(1e-3 * r_th))?,
                hi: positive("hi_per_cm3_s", exp.hi_per_cm3_s.unwrap_or(1e3 * r_th))?,
                per_decade: exp.points_per_decade.unwrap_or(40),
            };
            if grid.hi <= grid.lo || grid.per_decade == 0 {
                return Err(invalid("ll grid needs lo < hi and points_per_decade > 0"));
            }
            Experiment::Ll { grid }
        }
        ExperimentKind::Pulse => {
            let pump = match (pump, exp.multiple) {
                (Some(_), Some(_)) => {
                    return Err(invalid("pulse takes either a pump block or a multiple"))
                }
                (Some(p @ PumpWaveform::GaussianPulseTrain { .. }), None) => p,
                (Some(_), None) => return Err(invalid("pulse needs a pulse_train pump")),
                (None, m) => {
                    let m = m.unwrap_or(DEFAULT_PULSE_MULTIPLE);
                    if !(m >= 0.0 && m.is_finite()) {
                        return Err(invalid("multiple must be non-negative"));
                    }
                    SweepConfig::default()
                        .waveform(params, m)
                        .map_err(|e| invalid(e.to_string()))?
                }
            };
            Experiment::Pulse { pump }
        }
        ExperimentKind::Sweep => {
            let d = SweepConfig::default();
            let sweep = SweepConfig {
                fwhm: exp.fwhm_ps.map_or(d.fwhm, |v| v.0),
                rep_period: rep_period(exp.rep_period_ps, exp.rep_mhz)?.unwrap_or(d.rep_period),
                offset: exp.offset_ps.map_or(d.offset, |v| v.0),
                equivalent_window: exp.equivalent_window_ps.map(|v| v.0),
            };
            let multiples = exp
                .multiples
                .unwrap_or_else(|| DEFAULT_SWEEP_MULTIPLES.to_vec());
            if multiples.is_empty()
                || multiples.iter().any(|m| !(m.is_finite() && *m >= 0.0))
                || multiples.windows(2).any(|w| w[1] <= w[0])
            {
                return Err(invalid(
                    "multiples must be non-empty, non-negative and ascending",
                ));
            }
            sweep
                .waveform(params, 1.0)
                .map_err(|e| invalid(e.to_string()))?;
            if let Some(w) = sweep.equivalent_window {
                positive("equivalent_window_ps", w)?;
            }
            Experiment::Sweep { multiples, sweep }
        }
        ExperimentKind::Fit => {
            let data_csv = exp.data_csv.ok_or_else(|| invalid("fit needs data_csv"))?;
            let free = match exp.free {
                Some(list) => resolve_free(&list)?,
                None => FitProblem::default_free_set(),
            };
            Experiment::Fit {
                data_csv: PathBuf::from(data_csv),
                free,
                restarts: exp.restarts.unwrap_or(8),
                max_evals: exp.max_evals.unwrap_or(4000),
            }
        }
    };
    Ok(resolved)
}

fn resolve_integration(
    doc: Option<&IntegrationDoc>,
    params: &SimParams,
) -> Result<IntegrationConfig, CliError> {
    let d = IntegrationConfig::default();
    let Some(i) = doc else { return Ok(d) };
    let cfg = IntegrationConfig {
        rel_tol: i.rel_tol.unwrap_or(d.rel_tol),
        abs_tol: i.abs_tol_scaled.unwrap_or(d.abs_tol),
        dt_init: i.dt_init_ps.map(|v| v.0),
        dt_max: i.dt_max_ps.map(|v| v.0),
        dt_min: i.dt_min_ps.map_or(d.dt_min, |v| v.0),
        max_steps: i.max_steps.unwrap_or(d.max_steps),
        output_dt: i.output_dt_ps.map_or(d.output_dt, |v| v.0),
        scaling: match i.scaling {
            Some(ScalingDoc::Si) => Scaling::SI,
            _ => Scaling::NORMALIZED,
        },
    };
    cfg.validate(params)
        .map_err(|e| invalid(format!("integration: {e}")))?;
    Ok(cfg)
}

fn resolve(doc: ConfigDoc, wanted: Option<ExperimentKind>) -> Result<RunConfig, CliError> {
    let params = resolve_params(&doc)?;
    let experiment = resolve_experiment(&doc, &params, wanted)?;
    let integration = resolve_integration(doc.integration.as_ref(), &params)?;
    Ok(RunConfig {
        params,
        experiment,
        integration,
        output_dir: PathBuf::from(doc.output_dir.as_deref().unwrap_or("out")),
        plots: doc.plots.unwrap_or(false),
        seed: doc.seed.unwrap_or(0),
    })
}

/// Parameters in document units, every key explicit.
pub fn params_doc(p: &SimParams) -> ParamsDoc {
    ParamsDoc {
        tau_sp_ps: Some(Picos(p.tau_sp)),
        tau_nr_ps: Some(if p.tau_nr.is_infinite() {
            None
        } else {
            Some(Picos(p.tau_nr))
        }),
        tau_w_ps: Some(Picos(p.tau_w)),
        tau_c_ps: Some(Picos(p.tau_c)),
        tau_p_ps: Some(Picos(p.tau_p)),
        gamma: Some(p.gamma),
        beta: Some(p.beta),
        g0_cm3_per_s: Some(p.g0),
        n_tr_per_cm3: Some(p.n_tr),
        q_factor: p.q_factor,
        lambda_nm: p.lambda_nm,
    }
}

pub fn pump_doc(w: &PumpWaveform) -> PumpDoc {
    let blank = |kind| PumpDoc {
        kind,
        rate_per_cm3_s: None,
        fwhm_ps: None,
        rep_period_ps: None,
        rep_mhz: None,
        area_per_cm3: None,
        average_power_w: None,
        offset_ps: None,
        count: None,
        points: None,
    };
    match w {
        PumpWaveform::Cw { rate } => PumpDoc {
            rate_per_cm3_s: Some(*rate),
            ..blank(PumpKind::Cw)
        },
        PumpWaveform::GaussianPulseTrain {
            fwhm,
            rep_period,
            area,
            offset,
            count,
        } => PumpDoc {
            fwhm_ps: Some(Picos(*fwhm)),
            rep_period_ps: Some(Picos(*rep_period)),
            area_per_cm3: Some(*area),
            offset_ps: Some(Picos(*offset)),
            count: *count,
            ..blank(PumpKind::PulseTrain)
        },
        PumpWaveform::Tabulated { table } => PumpDoc {
            points: Some(table.iter().map(|&(t, r)| (Picos(t), r)).collect()),
            ..blank(PumpKind::Tabulated)
        },
    }
}

/// Fully explicit document for a resolved configuration (no preset).
pub fn to_doc(cfg: &RunConfig) -> ConfigDoc {
    let mut pump = None;
    let mut e = ExperimentDoc::empty(cfg.experiment.kind());
    match &cfg.experiment {
        Experiment::Steady { rate } => e.rate_per_cm3_s = Some(*rate),
        Experiment::Ll { grid } => {
            e.lo_per_cm3_s = Some(grid.lo);
            e.hi_per_cm3_s = Some(grid.hi);
            e.points_per_decade = Some(grid.per_decade);
        }
        Experiment::Pulse { pump: w } => pump = Some(pump_doc(w)),
        Experiment::Sweep { multiples, sweep } => {
            e.multiples = Some(multiples.clone());
            e.fwhm_ps = Some(Picos(sweep.fwhm));
            e.rep_period_ps = Some(Picos(sweep.rep_period));
            e.offset_ps = Some(Picos(sweep.offset));
            e.equivalent_window_ps = sweep.equivalent_window.map(Picos);
        }
        Experiment::Fit {
            data_csv,
            free,
            restarts,
            max_evals,
        } => {
            e.data_csv = Some(data_csv.to_string_lossy().into_owned());
            e.free = Some(
                free.iter()
                    .map(|f| {
                        let &(_, key, shift) = PARAM_KEYS
                            .iter()
                            .find(|k| k.0 == f.param)
                            .expect("known parameter");
                        FreeDoc {
                            param: key.into(),
                            lower: Some(si_to_number(f.lower, shift)),
                            upper: Some(si_to_number(f.upper, shift)),
                        }
                    })
                    .collect(),
            );
            e.restarts = Some(*restarts);
            e.max_evals = Some(*max_evals);
        }
    }
    let i = &cfg.integration;
    let integration = IntegrationDoc {
        rel_tol: Some(i.rel_tol),
        abs_tol_scaled: Some(i.abs_tol),
        dt_init_ps: i.dt_init.map(Picos),
        dt_max_ps: i.dt_max.map(Picos),
        dt_min_ps: Some(Picos(i.dt_min)),
        max_steps: Some(i.max_steps),
        output_dt_ps: Some(Picos(i.output_dt)),
        scaling: Some(if i.scaling == Scaling::SI {
            ScalingDoc::Si
        } else {
            ScalingDoc::Normalized
        }),
    };
    ConfigDoc {
        preset: None,
        params: Some(params_doc(&cfg.params)),
        pump,
        calibration: None,
        experiment: Some(e),
        integration: Some(integration),
        output_dir: Some(cfg.output_dir.to_string_lossy().into_owned()),
        plots: Some(cfg.plots),
        seed: Some(cfg.seed),
    }
}

/// Pretty JSON for a resolved configuration.
pub fn to_json(cfg: &RunConfig) -> String {
    serde_json::to_string_pretty(&to_doc(cfg)).expect("config documents always serialize")
}
