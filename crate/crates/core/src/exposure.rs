//! Cumulative exposure (the degradation index) and its rate.
//!
//! The index of a unit is `u(t) = ∫_0^t h(Σ_j f_j[x_j(s)]) ds`, discretized as
//! a left Riemann sum on the observed cycle grid. The rate observed at the
//! first cycle is held back to time zero, so `u(0) = 0` and, with all
//! effects zero, `u(t) = t` on any grid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisError, SensorBasis, Standardization};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unit {unit}: {reason}")]
    InvalidUnit { unit: u32, reason: String },
    #[error("dataset has no units")]
    Empty,
    #[error("sensor `{name}`: {source}")]
    Sensor {
        name: String,
        #[source]
        source: BasisError,
    },
    #[error("coefficient layout mismatch: expected {expected} values, got {actual}")]
    CoefficientMismatch { expected: usize, actual: usize },
}

/// One unit's sensor history with its event time and status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub unit_id: u32,
    /// Observation times in cycles, strictly increasing.
    pub cycles: Vec<f64>,
    /// One row per cycle, one column per sensor.
    pub signals: Vec<Vec<f64>>,
    /// `true` for a failure (δ = 1), `false` for a censored unit.
    pub failed: bool,
}

impl UnitRecord {
    /// Failure or censoring time: the last observed cycle.
    pub fn event_time(&self) -> f64 {
        *self.cycles.last().expect("validated unit has at least one cycle")
    }

    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    pub fn validate(&self, sensors: usize) -> Result<(), DataError> {
        let bad = |reason: String| DataError::InvalidUnit {
            unit: self.unit_id,
            reason,
        };
        if self.cycles.is_empty() {
            return Err(bad("no observed cycles".into()));
        }
        if self.cycles.len() != self.signals.len() {
            return Err(bad(format!(
                "{} cycles but {} signal rows",
                self.cycles.len(),
                self.signals.len()
            )));
        }
        if self.cycles[0] < 0.0 || !self.cycles[0].is_finite() {
            return Err(bad(format!("first cycle {} is not a finite time >= 0", self.cycles[0])));
        }
        if let Some(w) = self.cycles.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(bad(format!("cycles not strictly increasing at {} -> {}", w[0], w[1])));
        }
        for (row, values) in self.signals.iter().enumerate() {
            if values.len() != sensors {
                return Err(bad(format!("row {row} has {} sensors, expected {sensors}", values.len())));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("row {row} has a non-finite reading")));
            }
        }
        Ok(())
    }
}

/// A set of units sharing one sensor layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub sensor_names: Vec<String>,
    pub units: Vec<UnitRecord>,
}

impl Dataset {
    pub fn new(sensor_names: Vec<String>, units: Vec<UnitRecord>) -> Result<Self, DataError> {
        let ds = Self { sensor_names, units };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        for u in &self.units {
            u.validate(self.sensor_count())?;
        }
        Ok(())
    }

    pub fn sensor_count(&self) -> usize {
        self.sensor_names.len()
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn failed_count(&self) -> usize {
        self.units.iter().filter(|u| u.failed).count()
    }

    /// Subset by unit positions, keeping the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            sensor_names: self.sensor_names.clone(),
            units: idx.iter().map(|&i| self.units[i].clone()).collect(),
        }
    }

    /// All readings of sensor `j`, pooled across units and cycles.
    pub fn pooled_sensor(&self, j: usize) -> Vec<f64> {
        self.units
            .iter()
            .flat_map(|u| u.signals.iter().map(move |row| row[j]))
            .collect()
    }
}

/// Coefficients split into one contiguous group per sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedBeta {
    values: Vec<f64>,
    offsets: Vec<usize>,
}

impl GroupedBeta {
    pub fn zeros(group_sizes: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(group_sizes.len() + 1);
        offsets.push(0);
        for s in group_sizes {
            offsets.push(offsets.last().unwrap() + s);
        }
        Self {
            values: vec![0.0; *offsets.last().unwrap()],
            offsets,
        }
    }

    pub fn from_groups(groups: &[Vec<f64>]) -> Self {
        let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
        let mut beta = Self::zeros(&sizes);
        for (j, g) in groups.iter().enumerate() {
            beta.group_mut(j).copy_from_slice(g);
        }
        beta
    }

    pub fn from_flat(values: Vec<f64>, group_sizes: &[usize]) -> Result<Self, DataError> {
        let mut beta = Self::zeros(group_sizes);
        if values.len() != beta.values.len() {
            return Err(DataError::CoefficientMismatch {
                expected: beta.values.len(),
                actual: values.len(),
            });
        }
        beta.values = values;
        Ok(beta)
    }

    pub fn group_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn group_range(&self, j: usize) -> std::ops::Range<usize> {
        self.offsets[j]..self.offsets[j + 1]
    }

    pub fn group(&self, j: usize) -> &[f64] {
        &self.values[self.group_range(j)]
    }

    pub fn group_mut(&mut self, j: usize) -> &mut [f64] {
        let r = self.group_range(j);
        &mut self.values[r]
    }

    pub fn group_norm(&self, j: usize) -> f64 {
        l2_norm(self.group(j))
    }

    pub fn group_norms(&self) -> Vec<f64> {
        (0..self.group_count()).map(|j| self.group_norm(j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn to_groups(&self) -> Vec<Vec<f64>> {
        (0..self.group_count()).map(|j| self.group(j).to_vec()).collect()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Coefficients plus the fixed location `alpha` and the scale `sigma` of the
/// threshold distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: GroupedBeta,
    pub sigma: f64,
    pub alpha: f64,
}

/// How a sensor enters the linear predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SensorEffect {
    /// Additive M-spline effect (one coefficient per basis function).
    Spline(SensorBasis),
    /// Linear effect on the standardized reading (one coefficient).
    Linear {
        sensor_id: usize,
        standardization: Standardization,
    },
}

impl SensorEffect {
    pub fn sensor_id(&self) -> usize {
        match self {
            SensorEffect::Spline(b) => b.sensor_id,
            SensorEffect::Linear { sensor_id, .. } => *sensor_id,
        }
    }

    pub fn standardization(&self) -> &Standardization {
        match self {
            SensorEffect::Spline(b) => &b.standardization,
            SensorEffect::Linear { standardization, .. } => standardization,
        }
    }

    pub fn width(&self) -> usize {
        match self {
            SensorEffect::Spline(b) => b.basis_count(),
            SensorEffect::Linear { .. } => 1,
        }
    }

    /// Features of a standardized reading.
    pub fn features_standardized(&self, z: f64, out: &mut [f64]) {
        match self {
            SensorEffect::Spline(b) => b.spec.eval_into(z, out),
            SensorEffect::Linear { .. } => out[0] = z,
        }
    }

    pub fn features_raw(&self, raw: f64, out: &mut [f64]) {
        self.features_standardized(self.standardization().apply(raw), out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    #[default]
    Spline,
    Linear,
}

/// Per-sensor effect maps for a whole dataset; group `j` of the coefficient
/// vector belongs to `effects[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectBasis {
    pub effects: Vec<SensorEffect>,
}

impl EffectBasis {
    /// Standardizes every sensor on the pooled readings of `data` and builds
    /// its effect map.
    pub fn build(data: &Dataset, kind: EffectKind, n_interior: usize) -> Result<Self, DataError> {
        let mut effects = Vec::with_capacity(data.sensor_count());
        for (j, name) in data.sensor_names.iter().enumerate() {
            let raw = data.pooled_sensor(j);
            let wrap = |source| DataError::Sensor {
                name: name.clone(),
                source,
            };
            let effect = match kind {
                EffectKind::Spline => {
                    SensorEffect::Spline(SensorBasis::from_raw(j, &raw, n_interior).map_err(wrap)?)
                }
                EffectKind::Linear => SensorEffect::Linear {
                    sensor_id: j,
                    standardization: Standardization::fit(&raw).map_err(wrap)?,
                },
            };
            effects.push(effect);
        }
        Ok(Self { effects })
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.effects.iter().map(SensorEffect::width).collect()
    }

    pub fn width(&self) -> usize {
        self.effects.iter().map(SensorEffect::width).sum()
    }

    pub fn sensor_count(&self) -> usize {
        self.effects.len()
    }

    /// Full feature row for one observation of raw readings.
    pub fn features_raw(&self, raw: &[f64], out: &mut [f64]) {
        let mut off = 0;
        for e in &self.effects {
            let w = e.width();
            e.features_raw(raw[e.sensor_id()], &mut out[off..off + w]);
            off += w;
        }
    }

    /// Full feature row for one observation of standardized readings.
    pub fn features_standardized(&self, z: &[f64], out: &mut [f64]) {
        let mut off = 0;
        for e in &self.effects {
            let w = e.width();
            e.features_standardized(z[e.sensor_id()], &mut out[off..off + w]);
            off += w;
        }
    }

    /// Linear predictor `Σ_j f_j(x_j)` for raw readings.
    pub fn linear_predictor(&self, raw: &[f64], beta: &GroupedBeta) -> f64 {
        let mut feats = vec![0.0; self.width()];
        self.features_raw(raw, &mut feats);
        dot(&feats, beta.as_slice())
    }

    /// Pre-integration damage level `h(Σ_j f_j)` at standardized readings.
    pub fn damage_level_standardized(&self, z: &[f64], beta: &GroupedBeta) -> f64 {
        let mut feats = vec![0.0; self.width()];
        self.features_standardized(z, &mut feats);
        transform_h(dot(&feats, beta.as_slice()))
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four partial sums let the compiler vectorize.
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `h(z) = log(1 + e^z) / log 2`, maps the real line onto `(0, ∞)` with `h(0) = 1`.
#[inline]
pub fn transform_h(z: f64) -> f64 {
    (z.max(0.0) + log1p_exp_neg(z.abs())) / std::f64::consts::LN_2
}

const TABLE_END: f64 = 40.0;
const TABLE_SEGMENTS: usize = 512;
const TABLE_DEGREE: usize = 7;
const TABLE_STEP: f64 = TABLE_END / TABLE_SEGMENTS as f64;
const TABLE_INV_STEP: f64 = TABLE_SEGMENTS as f64 / TABLE_END;

/// `log(1 + e^{-a})` for `a ≥ 0`.
///
/// The objective evaluates this once per observation row, so it is served
/// from per-segment Taylor expansions (segments centred on multiples of the
/// step, degree 7). Every derivative is within a few percent of the value
/// itself across a segment, so the truncation error is relative, below
/// 1e-15, even deep in the exponential tail.
#[inline]
pub fn log1p_exp_neg(a: f64) -> f64 {
    if a < TABLE_END - 0.5 * TABLE_STEP {
        let k = (a * TABLE_INV_STEP + 0.5) as usize;
        let d = a - k as f64 * TABLE_STEP;
        let c: &[f64; TABLE_DEGREE + 1] = taylor_table()[k * (TABLE_DEGREE + 1)..(k + 1) * (TABLE_DEGREE + 1)]
            .try_into()
            .expect("segment width");
        // Estrin's scheme keeps the dependency chain short.
        let d2 = d * d;
        let d4 = d2 * d2;
        let lo = (c[0] + c[1] * d) + d2 * (c[2] + c[3] * d);
        let hi = (c[4] + c[5] * d) + d2 * (c[6] + c[7] * d);
        lo + d4 * hi
    } else {
        // log1p(x) = x - x²/2 + O(x³) with x < 5e-18.
        let e = (-a).exp();
        e * (1.0 - 0.5 * e)
    }
}

fn taylor_table() -> &'static [f64] {
    static TABLE: std::sync::OnceLock<Vec<f64>> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| {
        // With s(a) = 1/(1 + e^a): g = log(1 + e^{-a}), g' = -s and
        // ds/da = s² - s, so every derivative is a polynomial in s.
        let mut derivs: Vec<Vec<f64>> = vec![vec![0.0, -1.0]];
        for _ in 1..TABLE_DEGREE {
            let p = derivs.last().unwrap();
            let mut next = vec![0.0; p.len() + 1];
            for (i, &c) in p.iter().enumerate().skip(1) {
                // d/da (c s^i) = i c s^{i-1} (s² - s)
                next[i + 1] += i as f64 * c;
                next[i] -= i as f64 * c;
            }
            derivs.push(next);
        }
        let mut table = Vec::with_capacity(TABLE_SEGMENTS * (TABLE_DEGREE + 1));
        for k in 0..TABLE_SEGMENTS {
            let a = k as f64 * TABLE_STEP;
            let e = (-a).exp();
            let s = e / (1.0 + e);
            table.push(e.ln_1p());
            let mut factorial = 1.0;
            for (m, poly) in derivs.iter().enumerate() {
                factorial *= (m + 1) as f64;
                let value = poly.iter().rev().fold(0.0, |acc, &c| acc * s + c);
                table.push(value / factorial);
            }
        }
        table
    })
}

/// Damage rate `u'(t) = h(Σ_j Σ_k β_jk γ_jk[x_j(t)])` at one cycle of a unit.
pub fn damage_rate(
    unit: &UnitRecord,
    basis: &EffectBasis,
    params: &ModelParams,
    cycle_index: usize,
) -> f64 {
    transform_h(basis.linear_predictor(&unit.signals[cycle_index], &params.beta))
}

/// Left-Riemann integration weights over a cycle grid.
///
/// Weight `k` multiplies the rate at cycle `k`. The first cycle also covers
/// `[0, c_1)`; the last cycle only contributes when it is the only one.
pub fn riemann_weights(cycles: &[f64]) -> Vec<f64> {
    let n = cycles.len();
    let mut w = vec![0.0; n];
    if n == 0 {
        return w;
    }
    w[0] = cycles[0];
    for k in 0..n - 1 {
        let gap = cycles[k + 1] - cycles[k];
        if gap > 1.0 + 1e-9 && k + 1 < n {
            log::debug!("cycle gap of {gap} after {}: rate held across the gap", cycles[k]);
        }
        w[k] += gap;
    }
    w
}

/// `(cycle, u)` pairs of one unit's index, starting at `(0, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub unit_id: u32,
    pub points: Vec<(f64, f64)>,
}

impl Trajectory {
    /// Index at the event (last observed) time.
    pub fn at_event(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.1)
    }
}

/// Integrates the damage rate over the unit's cycle grid.
pub fn cumulative_exposure(unit: &UnitRecord, basis: &EffectBasis, params: &ModelParams) -> Trajectory {
    let rates: Vec<f64> = (0..unit.len())
        .map(|k| damage_rate(unit, basis, params, k))
        .collect();
    trajectory_from_rates(unit.unit_id, &unit.cycles, &rates)
}

pub fn trajectory_from_rates(unit_id: u32, cycles: &[f64], rates: &[f64]) -> Trajectory {
    let mut points = Vec::with_capacity(cycles.len() + 1);
    if cycles.first().is_some_and(|&c| c > 0.0) {
        points.push((0.0, 0.0));
    }
    let mut u = 0.0;
    let mut prev_t = 0.0;
    let mut prev_rate = rates.first().copied().unwrap_or(0.0);
    for (&t, &r) in cycles.iter().zip(rates) {
        u += prev_rate * (t - prev_t);
        points.push((t, u));
        prev_t = t;
        prev_rate = r;
    }
    Trajectory { unit_id, points }
}

/// Rows of one unit inside a [`DesignCache`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitSpan {
    pub start: usize,
    pub end: usize,
    pub failed: bool,
}

/// Precomputed feature rows of a dataset under a fixed [`EffectBasis`].
///
/// `rows` is row-major with `width` columns; every observed cycle of every
/// unit is one row. The exposure at the event time of a unit is
/// `Σ_rows weight · h(row · β)` and the rate at the event is `h` of its
/// last row.
#[derive(Debug, Clone)]
pub struct DesignCache {
    pub width: usize,
    pub rows: Vec<f64>,
    pub weights: Vec<f64>,
    pub units: Vec<UnitSpan>,
}

impl DesignCache {
    pub fn build(data: &Dataset, basis: &EffectBasis) -> Self {
        let width = basis.width();
        let total: usize = data.units.iter().map(UnitRecord::len).sum();
        let mut rows = vec![0.0; total * width];
        let mut weights = Vec::with_capacity(total);
        let mut units = Vec::with_capacity(data.len());
        let mut r = 0;
        for unit in &data.units {
            let start = r;
            for raw in &unit.signals {
                basis.features_raw(raw, &mut rows[r * width..(r + 1) * width]);
                r += 1;
            }
            weights.extend(riemann_weights(&unit.cycles));
            units.push(UnitSpan {
                start,
                end: r,
                failed: unit.failed,
            });
        }
        Self {
            width,
            rows,
            weights,
            units,
        }
    }

    /// Design restricted to the units at positions `idx`.
    pub fn subset(&self, idx: &[usize]) -> DesignCache {
        let w = self.width;
        let mut rows = Vec::new();
        let mut weights = Vec::new();
        let mut units = Vec::with_capacity(idx.len());
        for &i in idx {
            let s = self.units[i];
            let start = weights.len();
            rows.extend_from_slice(&self.rows[s.start * w..s.end * w]);
            weights.extend_from_slice(&self.weights[s.start..s.end]);
            units.push(UnitSpan {
                start,
                end: weights.len(),
                failed: s.failed,
            });
        }
        DesignCache {
            width: w,
            rows,
            weights,
            units,
        }
    }

    pub fn row_count(&self) -> usize {
        self.weights.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.rows[r * self.width..(r + 1) * self.width]
    }

    /// Linear predictors `z = X β` for every row.
    pub fn linear_predictors(&self, beta: &[f64], out: &mut [f64]) {
        for (r, z) in out.iter_mut().enumerate() {
            *z = dot(self.row(r), beta);
        }
    }

    /// `(u(t_i), u'(t_i))` per unit from precomputed linear predictors.
    pub fn exposures_from_predictors(&self, z: &[f64]) -> Vec<(f64, f64)> {
        self.units
            .iter()
            .map(|s| {
                let u: f64 = (s.start..s.end)
                    .filter(|&r| self.weights[r] > 0.0)
                    .map(|r| self.weights[r] * transform_h(z[r]))
                    .sum();
                (u, transform_h(z[s.end - 1]))
            })
            .collect()
    }

    /// `(u(t_i), u'(t_i))` per unit.
    pub fn exposures(&self, beta: &[f64]) -> Vec<(f64, f64)> {
        let mut z = vec![0.0; self.row_count()];
        self.linear_predictors(beta, &mut z);
        self.exposures_from_predictors(&z)
    }
}
