mod common;

use degidx::exposure::{cumulative_exposure, damage_rate, transform_h, GroupedBeta, ModelParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Trapezoid rule over the same cycle grid, starting from the first rate at 0.
fn trapezoid(cycles: &[f64], rates: &[f64]) -> f64 {
    let mut u = rates[0] * cycles[0];
    for k in 1..cycles.len() {
        u += 0.5 * (rates[k] + rates[k - 1]) * (cycles[k] - cycles[k - 1]);
    }
    u
}

#[test]
fn left_sum_tracks_trapezoid_at_full_horizon() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..50 {
        let units: Vec<_> = (0..4).map(|i| common::random_unit(&mut rng, i, 3, 350, true)).collect();
        let data = degidx::exposure::Dataset::new(vec!["a".into(), "b".into(), "c".into()], units).unwrap();
        let basis = common::spline_basis(&data);
        let params = ModelParams {
            beta: common::random_beta(&mut rng, &basis, 1.0),
            sigma: 0.5,
            alpha: 5f64.exp(),
        };
        for unit in &data.units {
            let rates: Vec<f64> = (0..unit.len()).map(|k| damage_rate(unit, &basis, &params, k)).collect();
            let oracle = trapezoid(&unit.cycles, &rates);
            let u = cumulative_exposure(unit, &basis, &params).at_event();
            assert_eq!(unit.event_time(), 350.0);
            assert!(((u - oracle) / oracle).abs() < 0.02, "trial {trial}: {u} vs {oracle}");
        }
    }
}

#[test]
fn zero_effects_give_identity_on_unit_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data = common::random_dataset(&mut rng, 30, 4, 120);
    let basis = common::spline_basis(&data);
    let params = ModelParams {
        beta: GroupedBeta::zeros(&basis.group_sizes()),
        sigma: 1.0,
        alpha: 5f64.exp(),
    };
    for unit in &data.units {
        for &(t, u) in &cumulative_exposure(unit, &basis, &params).points {
            assert_eq!(u, t);
        }
    }
}

#[test]
fn rate_is_softplus_over_log_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let z: f64 = rng.random_range(-60.0..60.0);
        // Independent evaluation: ln(1 + e^z) / ln 2 through ln_1p on the safe side.
        let oracle = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() } / std::f64::consts::LN_2;
        let h = transform_h(z);
        assert!(h > 0.0);
        assert!((h - oracle).abs() <= 1e-14 * oracle.max(1e-300), "{z}: {h} vs {oracle}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn index_non_decreasing_from_zero(seed in any::<u64>(), scale in 0.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = common::random_dataset(&mut rng, 3, 2, 60);
        let basis = common::spline_basis(&data);
        let params = ModelParams { beta: common::random_beta(&mut rng, &basis, scale), sigma: 1.0, alpha: 5f64.exp() };
        for unit in &data.units {
            let traj = cumulative_exposure(unit, &basis, &params);
            prop_assert_eq!(traj.points[0], (0.0, 0.0));
            prop_assert!(traj.points.windows(2).all(|w| w[1].1 >= w[0].1));
            for k in 0..unit.len() {
                prop_assert!(damage_rate(unit, &basis, &params, k) > 0.0);
            }
        }
    }
}
