use proptest::prelude::*;
use qdlase::fitting::{fit_ll, FitParam, FitProblem, FreeParam};
use qdlase::steady_state::{auto_grid, ll_curve};
use qdlase::SimParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

fn reference_curve() -> (Vec<f64>, Vec<f64>) {
    let params = SimParams::qd_nanocavity();
    let c = ll_curve(&params, &auto_grid(&params)).unwrap();
    (c.pumps(), c.outputs())
}

fn free(set: &[FitParam]) -> Vec<FreeParam> {
    set.iter().map(|&p| FreeParam::new(p)).collect()
}

fn assert_round_trip(set: &[FitParam]) {
    let truth = SimParams::qd_nanocavity();
    let (pumps, outputs) = reference_curve();
    for seed in 0..10 {
        let mut problem = FitProblem::new(pumps.clone(), outputs.clone(), truth, free(set));
        problem.seed = seed;
        let r = fit_ll(&problem).unwrap();
        for &p in set {
            let got = r.value(p).unwrap();
            let want = p.get(&truth);
            assert!(
                (got - want).abs() < 0.05 * want,
                "{} seed {seed}: {got:e} vs {want:e}",
                p.name()
            );
        }
    }
}

#[test]
fn noiseless_round_trip_beta() {
    assert_round_trip(&[FitParam::Beta]);
}

#[test]
fn noiseless_round_trip_beta_g0() {
    assert_round_trip(&[FitParam::Beta, FitParam::G0]);
}

/// With `tau_sp`, `tau_p` and `gamma` fixed and no nonradiative loss, the
/// steady-state photon density solves
/// `a p^2 + b p - c p phi - phi = 0` with `c = g0 tau_sp / beta`,
/// `b = (1/tau_p + gamma (1 - beta) g0 n_tr) / (gamma beta)` and `a / c`
/// fixed. Any (beta, g0, n_tr) sharing `b` and `c` gives the same curve.
fn curve_invariants(p: &SimParams) -> (f64, f64) {
    let c = p.g0 * p.tau_sp / p.beta;
    let b = (1.0 / p.tau_p + p.gamma * (1.0 - p.beta) * p.g0 * p.n_tr) / (p.gamma * p.beta);
    (b, c)
}

#[test]
fn beta_g0_ntr_family_shares_one_curve() {
    let truth = SimParams::qd_nanocavity();
    let (b, c) = curve_invariants(&truth);
    let beta = 0.19;
    let g0 = c * beta / truth.tau_sp;
    let n_tr = (b * truth.gamma * beta - 1.0 / truth.tau_p) / (truth.gamma * (1.0 - beta) * g0);
    let twin = SimParams {
        beta,
        g0,
        n_tr,
        ..truth
    };
    let grid = auto_grid(&truth);
    let a = ll_curve(&truth, &grid).unwrap().outputs();
    let z = ll_curve(&twin, &grid).unwrap().outputs();
    for (x, y) in a.iter().zip(&z) {
        assert!((x - y).abs() <= 1e-9 * x, "{x:e} vs {y:e}");
    }
}

#[test]
fn beta_g0_ntr_fit_recovers_the_identifiable_combinations() {
    let truth = SimParams::qd_nanocavity();
    let (pumps, outputs) = reference_curve();
    let (b0, c0) = curve_invariants(&truth);
    for seed in 0..10 {
        let mut problem = FitProblem::new(
            pumps.clone(),
            outputs.clone(),
            truth,
            free(&[FitParam::Beta, FitParam::G0, FitParam::NTr]),
        );
        problem.seed = seed;
        let r = fit_ll(&problem).unwrap();
        let (b, c) = curve_invariants(&r.params);
        assert!(r.residual < 1e-6, "seed {seed}: residual {:e}", r.residual);
        assert!(
            (b - b0).abs() < 0.05 * b0 && (c - c0).abs() < 0.05 * c0,
            "seed {seed}"
        );
        assert!((r.scale - 1.0).abs() < 0.05);
    }
}

#[test]
fn beta_survives_multiplicative_noise() {
    let truth = SimParams::qd_nanocavity();
    let (pumps, outputs) = reference_curve();
    let noise = LogNormal::new(0.0, 0.05).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut betas: Vec<f64> = (0..20)
        .map(|trial| {
            let noisy: Vec<f64> = outputs.iter().map(|o| o * noise.sample(&mut rng)).collect();
            let mut problem = FitProblem::new(pumps.clone(), noisy, truth, free(&[FitParam::Beta]));
            problem.seed = trial;
            fit_ll(&problem).unwrap().value(FitParam::Beta).unwrap()
        })
        .collect();
    betas.sort_by(f64::total_cmp);
    let median = 0.5 * (betas[9] + betas[10]);
    assert!((median - 0.2).abs() < 0.15 * 0.2, "median beta {median}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn output_scale_does_not_move_beta(log_k in -6.0f64..6.0) {
        let truth = SimParams::qd_nanocavity();
        let (pumps, outputs) = reference_curve();
        let k = 10f64.powf(log_k);
        let base = FitProblem::new(pumps.clone(), outputs.clone(), truth, free(&[FitParam::Beta]));
        let scaled = FitProblem::new(
            pumps,
            outputs.iter().map(|o| o * k).collect(),
            truth,
            free(&[FitParam::Beta]),
        );
        let a = fit_ll(&base).unwrap();
        let b = fit_ll(&scaled).unwrap();
        let (ba, bb) = (a.value(FitParam::Beta).unwrap(), b.value(FitParam::Beta).unwrap());
        prop_assert!((ba - bb).abs() < 0.01 * ba);
        prop_assert!((b.scale / a.scale - k).abs() < 0.01 * k);
    }
}
