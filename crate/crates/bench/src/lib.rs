//! Deterministic fixtures shared by the benchmarks.

use prefopt_core::dataio::{synth_generate, SyntheticData, SyntheticOracleConfig};
use prefopt_core::screening::CandidateScore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One small synthetic assay with default-length chains.
pub fn synthetic(variants: usize) -> SyntheticData {
    synth_generate(&SyntheticOracleConfig {
        n_assays: 1,
        variants_per_assay: variants,
        ..SyntheticOracleConfig::default()
    })
    .expect("default synthetic config is valid")
}

/// `n` candidates with uniform random values on each metric in `metrics`.
pub fn random_candidates(n: usize, metrics: &[&str], seed: u64) -> Vec<CandidateScore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut c = CandidateScore::new(format!("c{i:06}"));
            for m in metrics {
                c.values.insert(m.to_string(), rng.random::<f64>());
            }
            c
        })
        .collect()
}

/// Two correlated random vectors of length `n`.
pub fn correlated(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let y = x.iter().map(|v| v + 0.5 * rng.random::<f64>()).collect();
    (x, y)
}
