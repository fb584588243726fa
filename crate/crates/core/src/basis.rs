//! Order-3 M-spline bases over per-sensor standardized signal ranges.
//!
//! Each sensor is z-scored on the training data, then a knot vector is laid
//! down at equally spaced quantiles of the standardized values with the
//! boundary knots repeated `order` times. Every M-spline basis function is
//! non-negative and integrates to one over its support.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Polynomial order of the M-spline bases (piecewise quadratic).
pub const SPLINE_ORDER: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("degenerate sensor: values have zero spread")]
    DegenerateSensor,
    #[error("sensor sample is empty")]
    EmptySample,
    #[error("non-finite sensor value {0}")]
    NonFinite(f64),
    #[error("invalid spline spec: {0}")]
    InvalidSpec(String),
}

/// Knot layout for one sensor's M-spline basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineSpec {
    pub order: usize,
    pub interior_knots: Vec<f64>,
    pub boundary: (f64, f64),
}

impl SplineSpec {
    pub fn new(interior_knots: Vec<f64>, boundary: (f64, f64)) -> Result<Self, BasisError> {
        let spec = Self {
            order: SPLINE_ORDER,
            interior_knots,
            boundary,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), BasisError> {
        let (lo, hi) = self.boundary;
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(BasisError::InvalidSpec(format!(
                "boundary ({lo}, {hi}) must be finite and increasing"
            )));
        }
        if self.order == 0 {
            return Err(BasisError::InvalidSpec("order must be positive".into()));
        }
        let mut prev = lo;
        for &k in &self.interior_knots {
            if !(k > lo && k < hi) {
                return Err(BasisError::InvalidSpec(format!(
                    "interior knot {k} not strictly inside ({lo}, {hi})"
                )));
            }
            if k < prev {
                return Err(BasisError::InvalidSpec("interior knots must be non-decreasing".into()));
            }
            prev = k;
        }
        Ok(())
    }

    /// Number of basis functions: order + number of interior knots.
    pub fn basis_count(&self) -> usize {
        self.order + self.interior_knots.len()
    }

    /// Full knot sequence with each boundary knot repeated `order` times.
    pub fn knot_vector(&self) -> Vec<f64> {
        let mut knots = Vec::with_capacity(self.basis_count() + self.order);
        knots.extend(std::iter::repeat_n(self.boundary.0, self.order));
        knots.extend_from_slice(&self.interior_knots);
        knots.extend(std::iter::repeat_n(self.boundary.1, self.order));
        knots
    }

    /// Support `[t_i, t_{i+order}]` of basis `i`.
    pub fn support(&self, i: usize) -> (f64, f64) {
        let knots = self.knot_vector();
        (knots[i], knots[i + self.order])
    }

    /// Evaluates all `m` basis functions at `x`, clamping `x` into the boundary.
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.basis_count()];
        self.eval_into(x, &mut out);
        out
    }

    /// Allocation-free variant of [`SplineSpec::eval`]; `out.len()` must equal `m`.
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let m = self.basis_count();
        debug_assert_eq!(out.len(), m);
        let knots = self.knot_vector();
        let (lo, hi) = self.boundary;
        let x = if x.is_nan() { lo } else { x.clamp(lo, hi) };

        // Interval index `span` with knots[span] <= x < knots[span + 1]; at the
        // right boundary use the last non-empty interval.
        let last = knots.len() - self.order - 1;
        let mut span = self.order - 1;
        while span < last && knots[span + 1] <= x {
            span += 1;
        }
        while knots[span + 1] <= knots[span] && span > self.order - 1 {
            span -= 1;
        }

        // Order-1 pieces, then the standard M-spline recursion.
        let mut level = vec![0.0; knots.len() - 1];
        let width = knots[span + 1] - knots[span];
        if width > 0.0 {
            level[span] = 1.0 / width;
        }
        for k in 2..=self.order {
            let kf = k as f64;
            let mut next = vec![0.0; knots.len() - k];
            for (i, slot) in next.iter_mut().enumerate() {
                let denom = knots[i + k] - knots[i];
                if denom <= 0.0 {
                    continue;
                }
                let left = level[i];
                let right = level[i + 1];
                if left == 0.0 && right == 0.0 {
                    continue;
                }
                *slot = kf * ((x - knots[i]) * left + (knots[i + k] - x) * right)
                    / ((kf - 1.0) * denom);
            }
            level = next;
        }
        for (o, v) in out.iter_mut().zip(level.iter()) {
            // Rounding at a knot can leave a -0.0 or -1e-17; M-splines are non-negative.
            *o = v.max(0.0);
        }
        debug_assert_eq!(level.len(), m);
    }
}

/// Builds a spec over `values` with `n_interior` knots at equally spaced quantiles.
///
/// Knots that collapse onto a boundary or onto each other (heavily tied
/// samples) are dropped, so the resulting basis count can be smaller than
/// `n_interior + 3` for discrete-valued sensors.
pub fn build_spline_spec(values: &[f64], n_interior: usize) -> Result<SplineSpec, BasisError> {
    if values.is_empty() {
        return Err(BasisError::EmptySample);
    }
    if let Some(&bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(BasisError::NonFinite(bad));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = sorted[0];
    let hi = sorted[sorted.len() - 1];
    if hi - lo <= 0.0 {
        return Err(BasisError::DegenerateSensor);
    }
    let mut knots: Vec<f64> = Vec::with_capacity(n_interior);
    for q in 1..=n_interior {
        let k = quantile_sorted(&sorted, q as f64 / (n_interior + 1) as f64);
        if k > lo && k < hi && knots.last().is_none_or(|&prev| k > prev) {
            knots.push(k);
        }
    }
    if knots.len() < n_interior {
        log::warn!(
            "{} of {} quantile knots collapsed on tied values and were dropped",
            n_interior - knots.len(),
            n_interior
        );
    }
    SplineSpec::new(knots, (lo, hi))
}

/// Linear-interpolation quantile of a sorted sample (the common "type 7" rule).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// z-score constants estimated on training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std_dev: f64,
}

impl Standardization {
    pub fn fit(values: &[f64]) -> Result<Self, BasisError> {
        if values.is_empty() {
            return Err(BasisError::EmptySample);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std_dev = var.sqrt();
        if !(std_dev > 0.0) || !std_dev.is_finite() {
            return Err(BasisError::DegenerateSensor);
        }
        Ok(Self { mean, std_dev })
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std_dev
    }
}

/// An M-spline basis bound to one sensor, including its standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorBasis {
    pub sensor_id: usize,
    pub standardization: Standardization,
    pub spec: SplineSpec,
}

impl SensorBasis {
    /// Standardizes `raw` and knots the standardized sample.
    pub fn from_raw(sensor_id: usize, raw: &[f64], n_interior: usize) -> Result<Self, BasisError> {
        let standardization = Standardization::fit(raw)?;
        let z: Vec<f64> = raw.iter().map(|&x| standardization.apply(x)).collect();
        let spec = build_spline_spec(&z, n_interior)?;
        Ok(Self {
            sensor_id,
            standardization,
            spec,
        })
    }

    pub fn basis_count(&self) -> usize {
        self.spec.basis_count()
    }

    pub fn eval_raw_into(&self, raw: f64, out: &mut [f64]) {
        self.spec.eval_into(self.standardization.apply(raw), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn integrate(spec: &SplineSpec, i: usize, steps: usize) -> f64 {
        // Composite Simpson over each knot interval of the basis support.
        let knots = spec.knot_vector();
        let mut total = 0.0;
        for w in knots[i..=i + spec.order].windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let h = (b - a) / steps as f64;
            let f = |x: f64| spec.eval(x)[i];
            // Open at the right end of the interval to stay on one polynomial piece.
            let eps = 1e-12 * (b - a);
            let mut s = f(a) + f(b - eps);
            for k in 1..steps {
                let x = a + k as f64 * h;
                s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(x);
            }
            total += s * h / 3.0;
        }
        total
    }

    #[test]
    fn order_one_unit_interval() {
        let spec = SplineSpec {
            order: 1,
            interior_knots: vec![],
            boundary: (0.0, 1.0),
        };
        assert_eq!(spec.eval(0.5), vec![1.0]);
    }

    #[test]
    fn basis_count_follows_interior_knots() {
        let values: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        assert_eq!(build_spline_spec(&values, 7).unwrap().basis_count(), 10);
        assert_eq!(build_spline_spec(&values, 2).unwrap().basis_count(), 5);
        // Ten sensors at two interior knots gives fifty coefficients.
        assert_eq!(10 * build_spline_spec(&values, 2).unwrap().basis_count(), 50);
    }

    #[test]
    fn constant_sensor_is_degenerate() {
        assert_eq!(build_spline_spec(&[2.0; 30], 2), Err(BasisError::DegenerateSensor));
        assert_eq!(
            SensorBasis::from_raw(0, &[4.5; 10], 2).unwrap_err(),
            BasisError::DegenerateSensor
        );
    }

    #[test]
    fn knots_at_quantiles_and_boundary_at_extremes() {
        let values: Vec<f64> = (0..=90).map(|i| i as f64).collect();
        let spec = build_spline_spec(&values, 2).unwrap();
        assert_eq!(spec.boundary, (0.0, 90.0));
        assert_eq!(spec.interior_knots, vec![30.0, 60.0]);
    }

    #[test]
    fn integrates_to_one() {
        let spec = SplineSpec::new(vec![-1.3, -0.2, 0.1, 0.9, 1.0, 2.4, 2.5], (-3.0, 4.0)).unwrap();
        for i in 0..spec.basis_count() {
            let integral = integrate(&spec, i, 400);
            assert!((integral - 1.0).abs() < 1e-6, "basis {i}: {integral}");
        }
    }

    #[test]
    fn local_support() {
        let spec = SplineSpec::new(vec![0.2, 0.5, 0.7], (0.0, 1.0)).unwrap();
        for step in 0..=1000 {
            let x = step as f64 / 1000.0;
            let v = spec.eval(x);
            for (i, vi) in v.iter().enumerate() {
                let (a, b) = spec.support(i);
                if x < a || x > b {
                    assert_eq!(*vi, 0.0, "basis {i} nonzero at {x}");
                }
            }
        }
    }

    #[test]
    fn right_boundary_is_left_limit() {
        let spec = SplineSpec::new(vec![0.5], (0.0, 1.0)).unwrap();
        let at = spec.eval(1.0);
        let near = spec.eval(1.0 - 1e-12);
        for (a, b) in at.iter().zip(near.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        // Last basis peaks at the right boundary with value order / (t_last - t_prev).
        assert!((at[3] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn clamps_out_of_range() {
        let spec = SplineSpec::new(vec![0.3, 0.6], (0.0, 1.0)).unwrap();
        assert_eq!(spec.eval(-5.0), spec.eval(0.0));
        assert_eq!(spec.eval(7.0), spec.eval(1.0));
    }

    #[test]
    fn tied_quantiles_are_dropped() {
        let mut values = vec![1.0; 80];
        values.extend([0.0, 2.0, 3.0]);
        let spec = build_spline_spec(&values, 4).unwrap();
        // All quantiles sit on the tied value 1.0; one knot survives.
        assert_eq!(spec.interior_knots, vec![1.0]);
        assert_eq!(spec.basis_count(), 4);
    }

    fn spec_strategy() -> impl Strategy<Value = SplineSpec> {
        (
            -5.0f64..5.0,
            0.5f64..10.0,
            prop::collection::vec(0.01f64..0.99, 0..9),
        )
            .prop_map(|(lo, width, mut fracs)| {
                fracs.sort_by(f64::total_cmp);
                let knots = fracs.iter().map(|f| lo + f * width).collect();
                SplineSpec::new(knots, (lo, lo + width)).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn non_negative_everywhere(spec in spec_strategy(), t in -0.2f64..1.2) {
            let (lo, hi) = spec.boundary;
            let x = lo + t * (hi - lo);
            for v in spec.eval(x) {
                prop_assert!(v >= 0.0);
            }
        }
    }
}
