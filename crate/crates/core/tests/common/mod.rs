//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use qdlase::integrator::IntegrateError;
use qdlase::{integrate, IntegrationConfig, LaserState, PumpWaveform, SimParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Steady state by a uniform scan of the carrier balance in `n_g` over
/// `[0, clamp)` followed by bisection of the first sign change.
pub fn brute_force_steady(params: &SimParams, pump: f64, samples: usize) -> LaserState {
    let k = 1.0 / params.tau_sp
        + if params.tau_nr.is_finite() {
            1.0 / params.tau_nr
        } else {
            0.0
        };
    let n_w = pump / (1.0 / params.tau_w + 1.0 / params.tau_c);
    let capture = n_w / params.tau_c;
    let clamp = params.n_tr + 1.0 / (params.gamma * params.tau_p * params.g0);
    let photons = |n: f64| {
        params.gamma * params.beta * n
            / params.tau_sp
            / (1.0 / params.tau_p - params.gamma * params.g0 * (n - params.n_tr))
    };
    let balance = |n: f64| {
        if n >= clamp {
            return f64::NEG_INFINITY;
        }
        capture - k * n - params.g0 * (n - params.n_tr) * photons(n)
    };
    if pump == 0.0 {
        return LaserState::ZERO;
    }
    let h = clamp / samples as f64;
    let mut lo = 0.0;
    let mut hi = clamp;
    for i in 1..=samples {
        let x = if i == samples { clamp } else { i as f64 * h };
        if balance(x) <= 0.0 {
            lo = (i - 1) as f64 * h;
            hi = x;
            break;
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if balance(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let n_g = 0.5 * (lo + hi);
    LaserState::new(n_w, n_g, photons(n_g))
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// A random parameter set that passes full validation.
pub fn random_params<R: Rng>(rng: &mut R) -> SimParams {
    SimParams {
        tau_sp: log_uniform(rng, 50e-12, 5e-9),
        tau_nr: if rng.random_bool(0.5) {
            f64::INFINITY
        } else {
            log_uniform(rng, 100e-12, 100e-9)
        },
        tau_w: log_uniform(rng, 10e-12, 1e-9),
        tau_c: log_uniform(rng, 1e-12, 100e-12),
        tau_p: log_uniform(rng, 0.5e-12, 10e-12),
        gamma: rng.random_range(0.005..0.5),
        beta: rng.random_range(0.01..=1.0),
        g0: log_uniform(rng, 1e-6, 5e-5),
        n_tr: log_uniform(rng, 1e16, 1e18),
        q_factor: None,
        lambda_nm: None,
    }
}

/// Pump rates log-uniform between 1e-3 and 1e3 times the analytic threshold.
pub fn random_pumps<R: Rng>(rng: &mut R, params: &SimParams, n: usize) -> Vec<f64> {
    let r = params.threshold_rate_estimate();
    (0..n)
        .map(|_| log_uniform(rng, 1e-3 * r, 1e3 * r))
        .collect()
}

/// Parameters for robustness fuzzing: lifetimes log-uniform in
/// [0.1 ps, 10 ns], beta and gamma in (0, 1].
pub fn fuzz_params<R: Rng>(rng: &mut R) -> SimParams {
    let life = |rng: &mut R| log_uniform(rng, 0.1e-12, 10e-9);
    SimParams {
        tau_sp: life(rng),
        tau_nr: if rng.random_bool(0.5) {
            f64::INFINITY
        } else {
            life(rng)
        },
        tau_w: life(rng),
        tau_c: life(rng),
        tau_p: life(rng),
        gamma: 1.0 - rng.random_range(0.0..1.0),
        beta: 1.0 - rng.random_range(0.0..1.0),
        g0: log_uniform(rng, 1e-7, 1e-4),
        n_tr: log_uniform(rng, 1e15, 1e18),
        q_factor: None,
        lambda_nm: None,
    }
}

pub fn pump_rate<R: Rng>(rng: &mut R, params: &SimParams) -> f64 {
    let r = params.threshold_rate_estimate();
    log_uniform(rng, 1e-3 * r, 1e2 * r)
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Composite Simpson rule on a uniform grid (trapezoid on a trailing odd panel).
pub fn simpson(h: f64, y: &[f64]) -> f64 {
    let n = y.len();
    if n < 3 {
        return if n == 2 { 0.5 * h * (y[0] + y[1]) } else { 0.0 };
    }
    let m = if (n - 1).is_multiple_of(2) { n } else { n - 1 };
    let mut s = y[0] + y[m - 1];
    for (i, v) in y.iter().enumerate().take(m - 1).skip(1) {
        s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    let mut total = s * h / 3.0;
    if m < n {
        total += 0.5 * h * (y[n - 2] + y[n - 1]);
    }
    total
}

/// Outcome of one fuzzed run: the smallest emitted component and the
/// largest interpolation undershoot clipped before emission relative to
/// `abs_tol`, or the integration error.
pub fn fuzz_case(seed: u64) -> Result<(f64, f64), IntegrateError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = fuzz_params(&mut rng);
    let rate = pump_rate(&mut rng, &params);
    let pump = if rng.random_bool(0.5) {
        PumpWaveform::cw(rate).unwrap()
    } else {
        let period = 200e-12;
        PumpWaveform::pulse_train(
            rng.random_range(1e-12..10e-12),
            period,
            rate * period,
            50e-12,
        )
        .unwrap()
    };
    let cfg = IntegrationConfig {
        output_dt: 1e-12,
        ..IntegrationConfig::default()
    };
    let tr = integrate(LaserState::ZERO, &params, &pump, 0.0, 1e-9, &cfg)?;
    let min = tr
        .states
        .iter()
        .flat_map(|s| s.to_array())
        .fold(f64::INFINITY, f64::min);
    Ok((min, tr.stats.max_clipped / cfg.abs_tol))
}
