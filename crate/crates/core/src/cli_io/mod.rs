//! Command-line front end: configuration, result files and plots.

mod config;
mod svg;

pub use config::{
    param_doc_key, params_doc, parse_config, parse_config_for, parse_doc, pump_doc, to_doc,
    to_json, CalibrationDoc, ConfigDoc, Experiment, ExperimentDoc, ExperimentKind, FreeDoc,
    IntegrationDoc, LlGrid, ParamsDoc, PumpDoc, RunConfig, ScalingDoc, DEFAULT_PULSE_MULTIPLE,
    DEFAULT_SWEEP_MULTIPLES,
};
pub use svg::{emit_svg, Axis, PlotError, PlotSpec, Series};

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use thiserror::Error;

use crate::experiments::{
    modulation_rate_estimate, pulse_response, sweep_pump, ExperimentError, PulseMetrics,
    PulseResponse,
};
use crate::fitting::{fit_ll, FitError, FitProblem, FitResult};
use crate::integrator::{IntegrateError, Trajectory};
use crate::model::SimParams;
use crate::steady_state::{extract_threshold, ll_curve, log_grid, solve_steady, SteadyError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("parse error at `{path}` (line {line}, column {column}): {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{0}")]
    Validation(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Steady(#[from] SteadyError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Plot(#[from] PlotError),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "UsageError",
            CliError::Parse { .. } => "ParseError",
            CliError::Validation(_) => "ValidationError",
            CliError::UnknownPreset(_) => "UnknownPreset",
            CliError::Io { .. } => "IoError",
            CliError::Data(_) => "DataError",
            CliError::Steady(_) => "SteadyStateError",
            CliError::Integrate(_) => "IntegrationError",
            CliError::Experiment(_) => "ExperimentError",
            CliError::Fit(_) => "FitError",
            CliError::Plot(_) => "PlotError",
        }
    }

    pub fn module(&self) -> &'static str {
        match self {
            CliError::Steady(_) => "steady_state",
            CliError::Integrate(_) => "integrator",
            CliError::Experiment(_) => "experiments",
            CliError::Fit(_) => "fitting",
            _ => "cli_io",
        }
    }

    /// 2 for usage and configuration problems, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_)
            | CliError::Parse { .. }
            | CliError::Validation(_)
            | CliError::UnknownPreset(_)
            | CliError::Data(_) => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> Value {
        let mut v =
            json!({ "error": self.kind(), "module": self.module(), "message": self.to_string() });
        match self {
            CliError::Parse {
                path, line, column, ..
            } => {
                v["path"] = json!(path);
                v["line"] = json!(line);
                v["column"] = json!(column);
            }
            CliError::UnknownPreset(name) => {
                v["preset"] = json!(name);
                v["known"] = json!(SimParams::PRESET_NAMES);
            }
            _ => {}
        }
        v
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes via a temporary file in the same directory and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, contents).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// Formats a CSV table with LF line endings.
pub fn csv(header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:e}")
    } else {
        String::new()
    }
}

fn json_num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

/// Reads a two-column `pump, output` CSV. Blank lines, `#` comments and a
/// leading header row are skipped.
pub fn read_ll_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let mut pumps = Vec::new();
    let mut outputs = Vec::new();
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Result<Vec<f64>, _> = cols.iter().map(|c| c.parse::<f64>()).collect();
        match parsed {
            Ok(v) if v.len() == 2 => {
                pumps.push(v[0]);
                outputs.push(v[1]);
            }
            Err(_) if first => {}
            _ => {
                return Err(CliError::Data(format!(
                    "line {}: expected two numeric columns",
                    i + 1
                )))
            }
        }
        first = false;
    }
    Ok((pumps, outputs))
}

/// Files written and the one-line summary of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub summary: String,
    pub artifacts: Vec<PathBuf>,
}

struct Writer<'a> {
    dir: &'a Path,
    written: Vec<PathBuf>,
}

impl Writer<'_> {
    fn put(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        write_atomic(&path, contents.as_bytes())?;
        self.written.push(path);
        Ok(())
    }

    fn plot(&mut self, name: &str, spec: &PlotSpec) -> Result<(), CliError> {
        let svg = emit_svg(spec)?;
        self.put(name, &svg)
    }
}

const PS: f64 = 1e-12;

/// Executes a resolved configuration, writing artifacts to its output directory.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    fs::create_dir_all(&cfg.output_dir).map_err(|e| io_err(&cfg.output_dir, e))?;
    let mut w = Writer {
        dir: &cfg.output_dir,
        written: vec![],
    };
    w.put("resolved_config.json", &(to_json(cfg) + "\n"))?;
    let params = &cfg.params;
    let params_json = serde_json::to_value(params_doc(params)).expect("params serialize");

    let summary = match &cfg.experiment {
        Experiment::Steady { rate } => {
            let s = solve_steady(params, *rate)?;
            let doc = json!({
                "params": params_json,
                "pump_rate_per_cm3_s": rate,
                "analytic_threshold_per_cm3_s": params.threshold_rate_estimate(),
                "state": {
                    "n_w_per_cm3": s.n_w,
                    "n_g_per_cm3": s.n_g,
                    "p_per_cm3": s.p,
                },
            });
            w.put("steady.json", &pretty(&doc))?;
            format!(
                "steady: pump {:.4e} cm^-3 s^-1 -> p {:.4e} cm^-3, n_g {:.4e} cm^-3, n_w {:.4e} cm^-3",
                rate, s.p, s.n_g, s.n_w
            )
        }
        Experiment::Ll { grid } => {
            let pumps = log_grid(grid.lo, grid.hi, grid.per_decade);
            let curve = ll_curve(params, &pumps)?;
            let rows = curve
                .points
                .iter()
                .map(|p| vec![num(p.pump_rate), num(p.p), num(p.n_g), num(p.n_w)]);
            w.put(
                "ll_curve.csv",
                &csv("pump_cm3s,p_cm3,n_g_cm3,n_w_cm3", rows),
            )?;
            let threshold = extract_threshold(&curve);
            let threshold_json = match &threshold {
                Ok(t) => json!({
                    "threshold_per_cm3_s": t.threshold.map(json_num),
                    "max_log_log_slope": json_num(t.max_slope),
                    "max_curvature_per_cm3_s": json_num(t.max_curvature_pump),
                    "linear_intercept_per_cm3_s": t.linear_intercept.map(json_num),
                    "degenerate": t.degenerate,
                }),
                Err(e) => json!({ "error": e.to_string() }),
            };
            let doc = json!({
                "params": params_json,
                "points": curve.points.len(),
                "analytic_threshold_per_cm3_s": params.threshold_rate_estimate(),
                "threshold": threshold_json,
            });
            w.put("ll_curve.json", &pretty(&doc))?;
            if cfg.plots {
                w.plot(
                    "ll_curve.svg",
                    &PlotSpec {
                        title: "Steady-state light in / light out".into(),
                        x: Axis::log("pump rate [cm^-3 s^-1]"),
                        y: Axis::log("photon density [cm^-3]"),
                        series: vec![Series::new(
                            "p (steady state)",
                            curve
                                .points
                                .iter()
                                .map(|p| (p.pump_rate, p.p))
                                .filter(|p| p.1 > 0.0)
                                .collect(),
                        )],
                    },
                )?;
            }
            match threshold {
                Ok(t) => match t.threshold {
                    Some(th) => format!(
                        "ll: {} points, threshold {:.4e} cm^-3 s^-1 (max log-log slope {:.3})",
                        curve.points.len(),
                        th,
                        t.max_slope
                    ),
                    None => format!(
                        "ll: {} points, no threshold kink (max log-log slope {:.3})",
                        curve.points.len(),
                        t.max_slope
                    ),
                },
                Err(e) => format!(
                    "ll: {} points, threshold unavailable: {e}",
                    curve.points.len()
                ),
            }
        }
        Experiment::Pulse { pump } => {
            let r = pulse_response(params, pump, &cfg.integration)?;
            w.put("trajectory.csv", &trajectory_csv(&r.trajectory))?;
            let doc = json!({
                "params": params_json,
                "pump": serde_json::to_value(pump_doc(pump)).expect("pump serializes"),
                "metrics": metrics_json(&r),
                "integration": stats_json(&r.trajectory),
            });
            w.put("pulse.json", &pretty(&doc))?;
            if cfg.plots {
                w.plot(
                    "pulse.svg",
                    &PlotSpec {
                        title: "Pulsed response".into(),
                        x: Axis::linear("time after pump peak [ps]"),
                        y: Axis::linear("normalized amplitude"),
                        series: vec![
                            Series::new(
                                "pump",
                                normalized_window(&r.trajectory, &r.trajectory.pump_samples),
                            ),
                            Series::new(
                                "photon density",
                                normalized_window(&r.trajectory, &r.trajectory.photon_density()),
                            ),
                        ],
                    },
                )?;
            }
            match &r.metrics {
                Ok(m) => {
                    let band = modulation_rate_estimate(m.rise.peak_delay, m.fall.tau).ok();
                    format!(
                        "pulse: rise {:.3} ps, fall {:.3} ps, band {}",
                        m.rise.peak_delay / PS,
                        m.fall.tau / PS,
                        band.map_or("n/a".into(), |b| format!(
                            "{:.2}-{:.2} GHz",
                            b.conservative / 1e9,
                            b.optimistic / 1e9
                        ))
                    )
                }
                Err(e) => format!("pulse: no metrics ({e})"),
            }
        }
        Experiment::Sweep { multiples, sweep } => {
            let res = sweep_pump(params, multiples, sweep, &cfg.integration)?;
            let rows = res.points.iter().map(|pt| match &pt.response.metrics {
                Ok(m) => vec![
                    num(pt.multiple),
                    num(m.rise.peak_delay / PS),
                    num(m.fall.tau / PS),
                    num(m.peak_p),
                    num(m.integrated_output),
                ],
                Err(_) => vec![
                    num(pt.multiple),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                ],
            });
            w.put(
                "sweep.csv",
                &csv("multiple,rise_ps,fall_ps,peak_p_cm3,integrated_out", rows),
            )?;
            let points: Vec<Value> = res
                .points
                .iter()
                .map(|pt| json!({ "multiple": pt.multiple, "pulse_area_per_cm3": pt.response.pulse_area, "metrics": metrics_json(&pt.response) }))
                .collect();
            let doc = json!({
                "params": params_json,
                "sweep": {
                    "fwhm_ps": sweep.fwhm / PS,
                    "rep_period_ps": sweep.rep_period / PS,
                    "offset_ps": sweep.offset / PS,
                    "equivalent_window_ps": sweep.equivalent_window.map(|v| v / PS),
                    "analytic_threshold_per_cm3_s": params.threshold_rate_estimate(),
                },
                "points": points,
            });
            w.put("sweep.json", &pretty(&doc))?;
            if cfg.plots {
                let series: Vec<Series> = res
                    .points
                    .iter()
                    .filter(|pt| pt.response.metrics.is_ok())
                    .map(|pt| {
                        let tr = &pt.response.trajectory;
                        Series::new(
                            &format!("{}x threshold", pt.multiple),
                            normalized_window(tr, &tr.photon_density()),
                        )
                    })
                    .collect();
                if !series.is_empty() {
                    w.plot(
                        "sweep.svg",
                        &PlotSpec {
                            title: "Normalized response versus pump level".into(),
                            x: Axis::linear("time after pump peak [ps]"),
                            y: Axis::linear("normalized photon density"),
                            series,
                        },
                    )?;
                }
            }
            let falls: Vec<String> = res
                .points
                .iter()
                .map(|pt| {
                    pt.response
                        .metrics
                        .as_ref()
                        .map_or("n/a".into(), |m| format!("{:.3}", m.fall.tau / PS))
                })
                .collect();
            let rises: Vec<String> = res
                .points
                .iter()
                .map(|pt| {
                    pt.response
                        .metrics
                        .as_ref()
                        .map_or("n/a".into(), |m| format!("{:.3}", m.rise.peak_delay / PS))
                })
                .collect();
            format!(
                "sweep: {} levels, rise [{}] ps, fall [{}] ps",
                res.points.len(),
                rises.join(", "),
                falls.join(", ")
            )
        }
        Experiment::Fit {
            data_csv,
            free,
            restarts,
            max_evals,
        } => {
            let text = fs::read_to_string(data_csv).map_err(|e| io_err(data_csv, e))?;
            let (pumps, outputs) = read_ll_csv(&text)?;
            let mut problem = FitProblem::new(pumps, outputs, *params, free.clone());
            problem.seed = cfg.seed;
            problem.restarts = *restarts;
            problem.max_evals = *max_evals;
            let r = fit_ll(&problem)?;
            w.put("fit.json", &pretty(&fit_json(&r)))?;
            if cfg.plots {
                let model = ll_curve(&r.params, &problem.pumps)?;
                w.plot(
                    "fit.svg",
                    &PlotSpec {
                        title: "Light in / light out fit".into(),
                        x: Axis::log("pump rate [cm^-3 s^-1]"),
                        y: Axis::log("output [arb. units]"),
                        series: vec![
                            Series::new(
                                "data",
                                problem
                                    .pumps
                                    .iter()
                                    .copied()
                                    .zip(problem.outputs.iter().copied())
                                    .collect(),
                            ),
                            Series::new(
                                "model",
                                model
                                    .points
                                    .iter()
                                    .map(|p| (p.pump_rate, r.scale * p.p))
                                    .filter(|p| p.1 > 0.0)
                                    .collect(),
                            ),
                        ],
                    },
                )?;
            }
            let values: Vec<String> = r
                .values
                .iter()
                .map(|&(p, v)| {
                    let (key, unit) = param_doc_key(p);
                    format!("{key}={:.4e}", v / unit)
                })
                .collect();
            format!(
                "fit: {} scale={:.4e} residual={:.3e} converged={}",
                values.join(" "),
                r.scale,
                r.residual,
                r.converged
            )
        }
    };
    Ok(RunOutcome {
        summary,
        artifacts: w.written,
    })
}

fn trajectory_csv(tr: &Trajectory) -> String {
    let rows = tr
        .times
        .iter()
        .zip(&tr.states)
        .zip(&tr.pump_samples)
        .map(|((t, s), r)| vec![num(*t), num(s.n_w), num(s.n_g), num(s.p), num(*r)]);
    csv("t_s,n_w_cm3,n_g_cm3,p_cm3,pump_cm3s", rows)
}

/// Samples from 50 ps before to 300 ps after the pump peak, in ps relative
/// to that peak and divided by their maximum.
fn normalized_window(tr: &Trajectory, y: &[f64]) -> Vec<(f64, f64)> {
    let i_peak = (0..tr.pump_samples.len())
        .max_by(|&a, &b| {
            tr.pump_samples[a]
                .total_cmp(&tr.pump_samples[b])
                .then(b.cmp(&a))
        })
        .unwrap_or(0);
    let t0 = tr.times.get(i_peak).copied().unwrap_or(0.0);
    let sel: Vec<(f64, f64)> = tr
        .times
        .iter()
        .zip(y)
        .filter(|(t, _)| **t >= t0 - 50.0 * PS && **t <= t0 + 300.0 * PS)
        .map(|(t, v)| ((t - t0) / PS, *v))
        .collect();
    let max = sel.iter().map(|p| p.1).fold(0.0, f64::max);
    let norm = if max > 0.0 { max } else { 1.0 };
    sel.into_iter().map(|(t, v)| (t, v / norm)).collect()
}

fn metrics_json(r: &PulseResponse) -> Value {
    match &r.metrics {
        Ok(m) => {
            let PulseMetrics {
                rise,
                fall,
                fall_sensitivity,
                turn_on_delay,
                peak_p,
                integrated_output,
            } = m;
            let band = modulation_rate_estimate(rise.peak_delay, fall.tau).ok();
            json!({
                "rise_ps": rise.peak_delay / PS,
                "rise_10_90_ps": rise.ten_ninety.map(|v| v / PS),
                "fall_ps": json_num(fall.tau / PS),
                "fall_r2": fall.r2,
                "fall_start_90_ps": fall_sensitivity.0.map(|v| json_num(v / PS)),
                "fall_start_70_ps": fall_sensitivity.1.map(|v| json_num(v / PS)),
                "turn_on_delay_ps": turn_on_delay / PS,
                "peak_p_per_cm3": peak_p,
                "integrated_output_per_cm3": integrated_output,
                "modulation_band_hz": band.map(|b| json!({ "conservative": b.conservative, "optimistic": b.optimistic })),
            })
        }
        Err(e) => json!({ "error": e.to_string() }),
    }
}

fn stats_json(tr: &Trajectory) -> Value {
    let s = tr.stats;
    json!({
        "accepted_steps": s.accepted,
        "rejected_steps": s.rejected,
        "negativity_rejections": s.negativity_rejections,
        "projections": s.projections,
        "max_clipped_scaled": json_num(s.max_clipped),
        "rhs_evaluations": s.rhs_evals,
        "samples": tr.len(),
    })
}

fn fit_json(r: &FitResult) -> Value {
    let mut sens = serde_json::Map::new();
    for s in &r.sensitivities {
        let key = match s.target {
            crate::fitting::SensitivityTarget::Param(p) => param_doc_key(p).0,
            crate::fitting::SensitivityTarget::Scale => "scale",
        };
        sens.insert(
            key.into(),
            json!({ "value": json_num(s.value), "one_sided": s.one_sided }),
        );
    }
    let free: Vec<&str> = r.values.iter().map(|v| param_doc_key(v.0).0).collect();
    let at_bounds: Vec<&str> = r.at_bounds.iter().map(|p| param_doc_key(*p).0).collect();
    json!({
        "params": serde_json::to_value(params_doc(&r.params)).expect("params serialize"),
        "free": free,
        "scale": r.scale,
        "residual": r.residual,
        "sensitivities": sens,
        "converged": r.converged,
        "iterations": r.iterations,
        "at_bounds": at_bounds,
        "spans_threshold": r.spans_threshold,
    })
}

/// Rows of the constant table: document key, value in document units, unit, source.
pub fn preset_table() -> Vec<(&'static str, String, &'static str, &'static str)> {
    let c = SimParams::qd_nanocavity();
    let b = SimParams::bulk_lifetime();
    vec![
        (
            "tau_sp_ps",
            format!("{}", c.tau_sp / PS),
            "ps",
            "cavity-coupled dot lifetime, measured",
        ),
        (
            "tau_sp_ps (bulk)",
            format!("{}", b.tau_sp / PS),
            "ps",
            "uncoupled dot lifetime, measured",
        ),
        (
            "tau_nr_ps",
            "inf".into(),
            "ps",
            "not given; no nonradiative loss assumed",
        ),
        (
            "tau_w_ps",
            format!("{}", c.tau_w / PS),
            "ps",
            "wetting-layer lifetime, quoted",
        ),
        (
            "tau_c_ps",
            format!("{}", c.tau_c / PS),
            "ps",
            "capture time into the dots, quoted",
        ),
        (
            "tau_p_ps",
            format!("{}", c.tau_p / PS),
            "ps",
            "photon lifetime quoted for the measured Q",
        ),
        (
            "q_factor",
            format!("{}", c.q_factor.unwrap_or(f64::NAN)),
            "-",
            "cavity quality factor, measured",
        ),
        (
            "lambda_nm",
            format!("{}", c.lambda_nm.unwrap_or(f64::NAN)),
            "nm",
            "assumed emission wavelength",
        ),
        (
            "gamma",
            format!("{}", c.gamma),
            "-",
            "mode confinement factor, quoted",
        ),
        ("beta", format!("{}", c.beta), "-", "L-L curve fit"),
        (
            "g0_cm3_per_s",
            format!("{:e}", c.g0),
            "cm^3 s^-1",
            "L-L curve fit",
        ),
        (
            "n_tr_per_cm3",
            format!("{:e}", c.n_tr),
            "cm^-3",
            "L-L curve fit",
        ),
    ]
}

fn presets_text() -> String {
    let rows = preset_table();
    let mut out = format!("presets: {}\n", SimParams::PRESET_NAMES.join(", "));
    out.push_str(&format!(
        "{:<18} {:>10} {:<10} {}\n",
        "key", "value", "unit", "source"
    ));
    for (k, v, u, s) in rows {
        out.push_str(&format!("{k:<18} {v:>10} {u:<10} {s}\n"));
    }
    out
}

#[derive(Debug, Parser)]
#[command(
    name = "qdlase",
    version,
    about = "Quantum-dot nanocavity laser rate-equation toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Steady state at one CW pump rate.
    Steady(RunArgs),
    /// Steady-state light-in/light-out curve and threshold.
    Ll(RunArgs),
    /// Response to a pulse train.
    Pulse(RunArgs),
    /// Pulse responses over several pump levels.
    Sweep(RunArgs),
    /// Fit parameters to a measured L-L curve.
    Fit(RunArgs),
    /// Print the built-in constant table.
    Presets(PresetArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overriding the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write SVG plots.
    #[arg(long)]
    pub plots: bool,
    /// Seed for randomised fit starts, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PresetArgs {
    /// Also write presets.csv here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Reads a config file for `kind`, applying command-line overrides. A
/// relative fit data path is taken relative to the config file.
pub fn load_config(args: &RunArgs, kind: ExperimentKind) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = parse_config_for(&text, kind)?;
    if let Experiment::Fit { data_csv, .. } = &mut cfg.experiment {
        if data_csv.is_relative() {
            if let Some(dir) = args.config.parent() {
                *data_csv = dir.join(&*data_csv);
            }
        }
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    cfg.plots |= args.plots;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let (args, kind) = match cli.command {
        Command::Presets(p) => {
            let _ = stdout.write_all(presets_text().as_bytes());
            if let Some(dir) = p.out {
                fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
                let rows = preset_table()
                    .into_iter()
                    .map(|(k, v, u, s)| vec![k.into(), v, u.into(), s.into()]);
                write_atomic(
                    &dir.join("presets.csv"),
                    csv("key,value,unit,source", rows).as_bytes(),
                )?;
            }
            return Ok(());
        }
        Command::Steady(a) => (a, ExperimentKind::Steady),
        Command::Ll(a) => (a, ExperimentKind::Ll),
        Command::Pulse(a) => (a, ExperimentKind::Pulse),
        Command::Sweep(a) => (a, ExperimentKind::Sweep),
        Command::Fit(a) => (a, ExperimentKind::Fit),
    };
    let cfg = load_config(&args, kind)?;
    let outcome = run(&cfg)?;
    let _ = writeln!(stdout, "{}", outcome.summary);
    Ok(())
}

/// Entry point shared by the binary and tests; returns the exit code.
pub fn cli_main<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = stdout.write_all(text.as_bytes());
            } else {
                let _ = stderr.write_all(text.as_bytes());
            }
            return code;
        }
    };
    match execute(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "{}", e.to_json());
            e.exit_code()
        }
    }
}
