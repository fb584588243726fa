//! Status classification, error rates, the linear-effect baseline and
//! accumulated local effects (ALE) of single sensors.

use serde::{Deserialize, Serialize};

use crate::basis::quantile_sorted;
use crate::estimation::{fit, FitConfig, FitError, FitResult, FittedModel};
use crate::exposure::{Dataset, EffectKind};
use crate::likelihood::lev_quantile;

/// `α̃_p = exp(log α + z_p σ)`.
pub fn practical_threshold(alpha: f64, sigma: f64, p: f64) -> f64 {
    if sigma == 0.0 {
        return alpha;
    }
    (alpha.ln() + lev_quantile(p) * sigma).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitPrediction {
    pub unit_id: u32,
    pub u_at_end: f64,
    pub predicted_failed: bool,
    pub true_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub predictions: Vec<UnitPrediction>,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub fnr: f64,
    pub fpr: f64,
    pub ter: f64,
    /// False when there are no truly failed units (FNR reported as 0).
    pub fnr_defined: bool,
    /// False when there are no truly censored units (FPR reported as 0).
    pub fpr_defined: bool,
    pub threshold: f64,
}

impl ClassificationReport {
    /// Builds the report from `(unit, u_end, predicted, truth)` rows.
    pub fn from_predictions(predictions: Vec<UnitPrediction>, threshold: f64) -> Self {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for p in &predictions {
            match (p.predicted_failed, p.true_failed) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        let rate = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let fnr = rate(fn_, tp + fn_);
        let fpr = rate(fp, fp + tn);
        Self {
            predictions,
            tp,
            fp,
            tn,
            fn_,
            fnr,
            fpr,
            ter: fnr + fpr,
            fnr_defined: tp + fn_ > 0,
            fpr_defined: fp + tn > 0,
            threshold,
        }
    }
}

/// Classifies units as failed when `u_end ≥ threshold`. Rates are NaN (not
/// zero) when undefined so callers can average over defined folds.
pub(crate) fn classify_exposures(u_end: &[f64], truth: &[bool], threshold: f64) -> RateSummary {
    let (mut fn_, mut n_failed, mut fp, mut n_censored) = (0usize, 0usize, 0usize, 0usize);
    for (&u, &t) in u_end.iter().zip(truth) {
        let pred = u >= threshold;
        if t {
            n_failed += 1;
            fn_ += usize::from(!pred);
        } else {
            n_censored += 1;
            fp += usize::from(pred);
        }
    }
    let rate = |num: usize, den: usize| if den == 0 { f64::NAN } else { num as f64 / den as f64 };
    RateSummary {
        fnr: rate(fn_, n_failed),
        fpr: rate(fp, n_censored),
    }
}

pub(crate) struct RateSummary {
    pub fnr: f64,
    pub fpr: f64,
}

/// Classifies every unit of `data` with the fitted index at its last cycle.
pub fn classify(data: &Dataset, model: &FittedModel, threshold: f64) -> ClassificationReport {
    let u_end = model.final_exposures(data);
    classify_values(data, &u_end, threshold)
}

pub fn classify_values(data: &Dataset, u_end: &[f64], threshold: f64) -> ClassificationReport {
    let predictions = data
        .units
        .iter()
        .zip(u_end)
        .map(|(unit, &u)| UnitPrediction {
            unit_id: unit.unit_id,
            u_at_end: u,
            predicted_failed: u >= threshold,
            true_failed: unit.failed,
        })
        .collect();
    ClassificationReport::from_predictions(predictions, threshold)
}

/// Baseline with one linear coefficient per standardized sensor and
/// adaptive LASSO selection, through the same objective machinery.
pub fn fit_linear_variant(data: &Dataset, cfg: &FitConfig) -> Result<FitResult, FitError> {
    let cfg = FitConfig {
        effect: EffectKind::Linear,
        ..cfg.clone()
    };
    fit(data, &cfg)
}

/// First-order ALE curve of one sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AleCurve {
    pub sensor_id: usize,
    /// Bin edges on the standardized scale, `K + 1` points.
    pub grid: Vec<f64>,
    /// Centered accumulated effect at each grid point.
    pub effect: Vec<f64>,
    /// Observations per bin, `K` values.
    pub bin_counts: Vec<usize>,
}

impl AleCurve {
    /// Data-weighted mean of the curve: each bin contributes the average of
    /// its two edge values, weighted by its count.
    pub fn weighted_mean(&self) -> f64 {
        let total: usize = self.bin_counts.iter().sum();
        if total == 0 {
            return 0.0;
        }
        self.bin_counts
            .iter()
            .enumerate()
            .map(|(k, &n)| n as f64 * 0.5 * (self.effect[k] + self.effect[k + 1]))
            .sum::<f64>()
            / total as f64
    }
}

/// ALE main effect of column `j` of `rows` for an arbitrary prediction
/// function.
///
/// Bin edges are quantiles of column `j`; tied edges are merged, so the
/// curve can have fewer than `n_bins` bins.
pub fn ale_main_effect_with<F>(rows: &[Vec<f64>], j: usize, n_bins: usize, target: F) -> AleCurve
where
    F: Fn(&[f64]) -> f64,
{
    let mut values: Vec<f64> = rows.iter().map(|r| r[j]).collect();
    values.sort_by(f64::total_cmp);
    let mut grid: Vec<f64> = Vec::with_capacity(n_bins + 1);
    for k in 0..=n_bins.max(1) {
        let q = quantile_sorted(&values, k as f64 / n_bins.max(1) as f64);
        if grid.last().is_none_or(|&last| q > last) {
            grid.push(q);
        }
    }
    if grid.len() < n_bins + 1 {
        log::warn!(
            "sensor {j}: {} distinct bin edges for {n_bins} bins; tied bins merged",
            grid.len()
        );
    }
    if grid.len() == 1 {
        return AleCurve {
            sensor_id: j,
            grid,
            effect: vec![0.0],
            bin_counts: vec![],
        };
    }
    let bins = grid.len() - 1;
    let mut sums = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    let mut probe = vec![0.0; rows.first().map_or(0, Vec::len)];
    for row in rows {
        let x = row[j];
        // Bin k covers (grid[k], grid[k+1]]; the minimum joins the first bin.
        let k = grid[1..].partition_point(|&edge| edge < x).min(bins - 1);
        probe.copy_from_slice(row);
        probe[j] = grid[k + 1];
        let hi = target(&probe);
        probe[j] = grid[k];
        let lo = target(&probe);
        sums[k] += hi - lo;
        counts[k] += 1;
    }
    let mut effect = Vec::with_capacity(grid.len());
    effect.push(0.0);
    let mut acc = 0.0;
    for k in 0..bins {
        if counts[k] > 0 {
            acc += sums[k] / counts[k] as f64;
        }
        effect.push(acc);
    }
    let mut curve = AleCurve {
        sensor_id: j,
        grid,
        effect,
        bin_counts: counts,
    };
    let mean = curve.weighted_mean();
    curve.effect.iter_mut().for_each(|v| *v -= mean);
    curve
}

/// Standardized observation rows of every unit and cycle.
pub fn standardized_rows(model: &FittedModel, data: &Dataset) -> Vec<Vec<f64>> {
    let stds: Vec<_> = model.basis.effects.iter().map(|e| *e.standardization()).collect();
    data.units
        .iter()
        .flat_map(|u| u.signals.iter())
        .map(|raw| raw.iter().zip(&stds).map(|(&x, s)| s.apply(x)).collect())
        .collect()
}

/// ALE of sensor `j` on the pre-integration damage level `h(Σ_j f_j)` of a
/// fitted model, over all observation rows of `data`.
pub fn ale_main_effect(model: &FittedModel, data: &Dataset, j: usize, n_bins: usize) -> AleCurve {
    let rows = standardized_rows(model, data);
    ale_main_effect_with(&rows, j, n_bins, |z| {
        model.basis.damage_level_standardized(z, &model.beta)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exposure::UnitRecord;

    const E5: f64 = 148.413_159_102_576_6;

    fn data_with_status(status: &[bool]) -> Dataset {
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

    #[test]
    fn threshold_cases() {
        let p_zero = (-1.0f64).exp();
        assert!((practical_threshold(E5, 0.3, p_zero) - E5).abs() < 1e-12);
        assert!((practical_threshold(E5, 0.01, 0.01) - 146.163_842_841_321_47).abs() < 1e-9);
        assert_eq!(practical_threshold(E5, 0.0, 0.01), E5);
    }

    #[test]
    fn extreme_thresholds() {
        let data = data_with_status(&[true, false, true, false, false]);
        let u = [10.0, 20.0, 30.0, 40.0, 50.0];
        let low = classify_values(&data, &u, 1.0);
        assert_eq!((low.fnr, low.fpr), (0.0, 1.0));
        let high = classify_values(&data, &u, 100.0);
        assert_eq!((high.fnr, high.fpr), (1.0, 0.0));
        assert_eq!(high.tp + high.fp + high.tn + high.fn_, 5);
    }

    #[test]
    fn no_failures_flags_fnr() {
        let data = data_with_status(&[false, false]);
        let r = classify_values(&data, &[1.0, 2.0], 1.5);
        assert!(!r.fnr_defined);
        assert_eq!(r.fnr, 0.0);
        assert_eq!(r.fpr, 0.5);
    }

    #[test]
    fn linear_target_recovers_slope() {
        let rows: Vec<Vec<f64>> = (0..2000)
            .map(|i| {
                let x = ((i * 7919) % 2000) as f64 / 400.0 - 2.5;
                vec![x, (i as f64 * 0.37).sin()]
            })
            .collect();
        let curve = ale_main_effect_with(&rows, 0, 40, |z| 2.0 * z[0] + z[1].powi(2));
        for w in curve.grid.windows(2).zip(curve.effect.windows(2)) {
            let slope = (w.1[1] - w.1[0]) / (w.0[1] - w.0[0]);
            assert!((slope - 2.0).abs() < 0.1, "{slope}");
        }
        assert!(curve.weighted_mean().abs() < 1e-10);
    }

    #[test]
    fn constant_target_is_flat() {
        let rows: Vec<Vec<f64>> = (0..300).map(|i| vec![i as f64, (i % 7) as f64]).collect();
        let curve = ale_main_effect_with(&rows, 0, 10, |z| z[1] * 3.0);
        assert!(curve.effect.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn tied_values_merge_bins() {
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![(i % 3) as f64]).collect();
        let curve = ale_main_effect_with(&rows, 0, 40, |z| z[0]);
        assert!(curve.grid.len() < 41);
        assert!(curve.grid.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(curve.grid[0], 0.0);
        assert_eq!(curve.bin_counts.iter().sum::<usize>(), 100);
    }
}
