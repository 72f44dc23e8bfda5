mod common;

use common::{brute_force_steady, random_params, random_pumps, rel_diff};
use proptest::prelude::*;
use qdlase::steady_state::{ll_curve, log_grid, solve_steady};
use qdlase::SimParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[test]
fn agrees_with_brute_force_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cases: Vec<(SimParams, Vec<f64>)> = (0..100)
        .map(|_| {
            let p = random_params(&mut rng);
            let pumps = random_pumps(&mut rng, &p, 10);
            (p, pumps)
        })
        .collect();
    let worst = cases
        .par_iter()
        .map(|(p, pumps)| {
            pumps
                .iter()
                .map(|&r| {
                    let fast = solve_steady(p, r).unwrap();
                    let slow = brute_force_steady(p, r, 1_000_000);
                    rel_diff(fast.p, slow.p)
                        .max(rel_diff(fast.n_g, slow.n_g))
                        .max(rel_diff(fast.n_w, slow.n_w))
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    assert!(worst < 1e-6, "worst relative deviation {worst:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn output_grows_with_pump(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(&mut rng);
        let r = p.threshold_rate_estimate();
        let curve = ll_curve(&p, &log_grid(1e-3 * r, 1e3 * r, 20)).unwrap();
        for w in curve.points.windows(2) {
            prop_assert!(w[1].p > w[0].p);
        }
    }
}
