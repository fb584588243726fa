#![allow(dead_code)]

use degidx::estimation::{log_spaced, FitConfig};
use degidx::exposure::{Dataset, EffectBasis, EffectKind, GroupedBeta, UnitRecord};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A unit with `len` unit-spaced cycles and smooth random signals.
pub fn random_unit(rng: &mut ChaCha8Rng, id: u32, sensors: usize, len: usize, failed: bool) -> UnitRecord {
    let drift: Vec<f64> = (0..sensors).map(|_| rng.random_range(-0.02..0.02)).collect();
    let level: Vec<f64> = (0..sensors).map(|_| rng.random_range(-1.0..1.0)).collect();
    let signals = (0..len)
        .map(|k| {
            (0..sensors)
                .map(|j| level[j] + drift[j] * k as f64 + rng.random_range(-0.3..0.3))
                .collect()
        })
        .collect();
    UnitRecord {
        unit_id: id,
        cycles: (1..=len).map(|c| c as f64).collect(),
        signals,
        failed,
    }
}

pub fn random_dataset(rng: &mut ChaCha8Rng, units: usize, sensors: usize, max_len: usize) -> Dataset {
    let records = (0..units)
        .map(|i| {
            let len = rng.random_range(2..=max_len);
            let failed = rng.random_bool(0.5);
            random_unit(rng, i as u32 + 1, sensors, len, failed)
        })
        .collect();
    let names = (1..=sensors).map(|j| format!("s{j}")).collect();
    Dataset::new(names, records).unwrap()
}

pub fn random_beta(rng: &mut ChaCha8Rng, basis: &EffectBasis, scale: f64) -> GroupedBeta {
    let groups: Vec<Vec<f64>> = basis
        .group_sizes()
        .iter()
        .map(|&s| (0..s).map(|_| rng.random_range(-scale..scale)).collect())
        .collect();
    GroupedBeta::from_groups(&groups)
}

pub fn spline_basis(data: &Dataset) -> EffectBasis {
    EffectBasis::build(data, EffectKind::Spline, 2).unwrap()
}

/// Small-budget configuration for pipeline tests.
pub fn quick_fit_config(seed: u64) -> FitConfig {
    let mut cfg = FitConfig {
        lambda_grid: log_spaced(1e-2, 1.0, 2),
        folds: 3,
        seed,
        ..FitConfig::default()
    };
    cfg.optimizer.evals_per_dim = 200;
    cfg.optimizer.cv_evals_per_dim = 60;
    cfg.optimizer.restarts = 1;
    cfg
}
