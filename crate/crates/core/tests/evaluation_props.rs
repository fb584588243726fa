mod common;

use degidx::estimation::{FittedModel, ModelObjective, Penalty};
use degidx::evaluation::{ale_main_effect, ale_main_effect_with, classify_values, standardized_rows};
use degidx::exposure::{Dataset, DesignCache, EffectBasis, EffectKind, GroupedBeta, UnitRecord};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn status_data(status: &[bool]) -> Dataset {
    let units = status
        .iter()
        .enumerate()
        .map(|(i, &f)| UnitRecord {
            unit_id: i as u32,
            cycles: vec![1.0],
            signals: vec![vec![0.0]],
            failed: f,
        })
        .collect();
    Dataset::new(vec!["s".into()], units).unwrap()
}

fn model_with(data: &Dataset, kind: EffectKind, beta: GroupedBeta) -> FittedModel {
    let basis = EffectBasis::build(data, kind, 2).unwrap();
    FittedModel {
        sensor_names: data.sensor_names.clone(),
        basis,
        selected_sensors: (0..beta.group_count()).filter(|&j| beta.group_norm(j) > 0.0).collect(),
        beta,
        sigma: 0.05,
        alpha: 5f64.exp(),
        sigma_lower: 0.01,
        lambda: 1.0,
    }
}

proptest! {
    #[test]
    fn rates_are_consistent(cases in prop::collection::vec((0.0f64..300.0, any::<bool>()), 1..60), t1 in 0.0f64..300.0, t2 in 0.0f64..300.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let status: Vec<bool> = cases.iter().map(|c| c.1).collect();
        let u: Vec<f64> = cases.iter().map(|c| c.0).collect();
        let data = status_data(&status);
        let a = classify_values(&data, &u, lo);
        let b = classify_values(&data, &u, hi);
        for r in [&a, &b] {
            prop_assert!((0.0..=1.0).contains(&r.fnr) && (0.0..=1.0).contains(&r.fpr));
            prop_assert_eq!(r.ter, r.fnr + r.fpr);
        }
        prop_assert!(b.fnr >= a.fnr);
        prop_assert!(b.fpr <= a.fpr);
    }

    #[test]
    fn penalty_only_adds(seed in any::<u64>(), lambda in 0.0f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = common::random_dataset(&mut rng, 10, 2, 40);
        let basis = common::spline_basis(&data);
        let beta = common::random_beta(&mut rng, &basis, 1.0);
        let design = DesignCache::build(&data, &basis);
        let sizes = basis.group_sizes();
        let with = Penalty { lambda, weights: vec![1.0, 1.0], eta: 5.0, alpha: 50.0, sigma_lower: 0.01 };
        let without = Penalty { lambda: 0.0, ..with.clone() };
        let v_sel = ModelObjective::new(&design, &sizes, &with).evaluate(&beta, 0.3);
        let v_nosel = ModelObjective::new(&design, &sizes, &without).evaluate(&beta, 0.3);
        prop_assert!(v_nosel <= v_sel);
    }
}

#[test]
fn zero_coefficient_sensor_has_flat_curve() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data = common::random_dataset(&mut rng, 20, 3, 60);
    let basis = common::spline_basis(&data);
    let mut beta = common::random_beta(&mut rng, &basis, 1.0);
    beta.group_mut(1).iter_mut().for_each(|v| *v = 0.0);
    let model = model_with(&data, EffectKind::Spline, beta);
    let curve = ale_main_effect(&model, &data, 1, 40);
    assert!(curve.effect.iter().all(|&v| v == 0.0));
    for j in [0, 2] {
        let c = ale_main_effect(&model, &data, j, 40);
        assert!(c.weighted_mean().abs() < 1e-10);
        assert!(c.effect.iter().any(|&v| v != 0.0));
    }
}

/// With a positive linear effect the damage level rises with the sensor, so
/// every accumulated step must be non-negative, and each step must equal the
/// bin-average finite difference of the target.
#[test]
fn monotone_effect_gives_monotone_curve() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = common::random_dataset(&mut rng, 25, 2, 50);
    let beta = GroupedBeta::from_groups(&[vec![0.8], vec![-0.4]]);
    let model = model_with(&data, EffectKind::Linear, beta);
    let curve = ale_main_effect(&model, &data, 0, 20);
    assert!(curve.effect.windows(2).all(|w| w[1] >= w[0]));

    let rows = standardized_rows(&model, &data);
    let target = |z: &[f64]| model.basis.damage_level_standardized(z, &model.beta);
    let direct = ale_main_effect_with(&rows, 0, 20, target);
    assert_eq!(direct, curve);
    let g = &curve.grid;
    for k in 0..curve.bin_counts.len() {
        let members: Vec<&Vec<f64>> = rows
            .iter()
            .filter(|r| (k == 0 && r[0] <= g[1]) || (r[0] > g[k] && r[0] <= g[k + 1]))
            .collect();
        let mean = members
            .iter()
            .map(|r| {
                let mut hi = (*r).clone();
                let mut lo = (*r).clone();
                hi[0] = g[k + 1];
                lo[0] = g[k];
                target(&hi) - target(&lo)
            })
            .sum::<f64>()
            / members.len() as f64;
        let step = curve.effect[k + 1] - curve.effect[k];
        assert!((step - mean).abs() < 1e-12, "bin {k}: {step} vs {mean}");
    }
}
