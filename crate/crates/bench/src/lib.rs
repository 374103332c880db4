//! Deterministic fixtures shared by the benchmarks.

use driftlab_core::sim::{run_pipeline, SimConfig};
use driftlab_core::TrialRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn normal_ish(n: usize, shift: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // sum of uniforms; shape doesn't matter for timing
    (0..n)
        .map(|_| (0..4).map(|_| rng.random::<f64>()).sum::<f64>() - 2.0 + shift)
        .collect()
}

/// `n` rows of `k` metric deltas with a shared latent factor and some gaps.
pub fn delta_rows(n: usize, k: usize, seed: u64) -> Vec<Vec<Option<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let latent: f64 = rng.random::<f64>() - 0.5;
            (0..k)
                .map(|j| {
                    if rng.random::<f64>() < 0.02 {
                        None
                    } else {
                        Some(latent * (j + 1) as f64 + 0.3 * (rng.random::<f64>() - 0.5))
                    }
                })
                .collect()
        })
        .collect()
}

/// Simulated corpus with `trials` repetitions per condition plan.
pub fn corpus(trials: u32, seed: u64) -> Vec<TrialRecord> {
    let mut cfg = SimConfig {
        seed,
        ..SimConfig::default()
    };
    for p in &mut cfg.conditions {
        p.trials = trials;
    }
    run_pipeline(&cfg)
        .expect("default simulator config is valid")
        .into_iter()
        .map(|o| o.trial)
        .collect()
}
