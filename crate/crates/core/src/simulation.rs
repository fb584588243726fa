//! Synthetic ten-sensor fleets with known effects.
//!
//! Five sensors drive degradation, five are inert. Each unit carries a random
//! wear speed that scales its trending sensors, so units degrade at different
//! paces. Censoring times are Weibull; a unit fails when its true index
//! reaches `α = e^5` by the end of its record.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform, Weibull};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exposure::{
    cumulative_exposure, DataError, Dataset, EffectBasis, EffectKind, GroupedBeta, ModelParams, UnitRecord,
};

pub const SENSOR_COUNT: usize = 10;
pub const EFFECTIVE_SENSORS: usize = 5;
pub const COEFS_PER_SENSOR: usize = 5;
pub const HORIZON: usize = 350;
pub const INTERIOR_KNOTS: usize = 2;
/// Largest tolerated failed fraction.
pub const MAX_FAILED_FRACTION: f64 = 0.9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("failed proportion {proportion:.3} exceeds {MAX_FAILED_FRACTION} at Weibull(shape {shape}, scale {scale})")]
    Calibration { proportion: f64, shape: f64, scale: f64 },
    #[error("invalid scenario settings: {0}")]
    Invalid(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[value(rename_all = "UPPER")]
pub enum Scenario {
    A,
    B,
    C,
    D,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::A, Scenario::B, Scenario::C, Scenario::D];

    /// Censoring distribution `(shape, scale)` calibrated by pilot runs of
    /// 10 000 units to give roughly 60–80% failures.
    pub fn default_weibull(self) -> (f64, f64) {
        match self {
            Scenario::A => (3.0, 130.0),
            Scenario::B => (3.0, 165.0),
            Scenario::C => (3.0, 215.0),
            Scenario::D => (3.0, 78.0),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

// Rows are basis indices, columns are sensors 1..5.
const COEF_A: [[f64; 5]; 5] = [
    [10.61, -2.49, -18.00, -3.07, -4.86],
    [1.39, 0.24, -3.31, -16.09, 11.55],
    [2.75, -4.93, -0.47, 1.32, 1.53],
    [4.35, 0.17, -1.06, -0.13, 1.97],
    [-0.38, -16.67, 2.31, 7.90, -6.59],
];
const COEF_B: [[f64; 5]; 5] = [
    [2.35, 0.08, 0.29, -0.12, -2.70],
    [1.76, -0.04, -0.28, 0.00, -2.09],
    [2.04, -0.18, 0.30, 0.14, -2.16],
    [1.59, -0.06, -0.11, -0.08, -2.49],
    [1.74, -0.09, -0.24, -0.04, -1.72],
];
const COEF_C: [[f64; 5]; 5] = [
    [-0.06, 2.42, -0.42, -2.64, 0.02],
    [0.16, 1.44, 0.48, -1.37, 0.08],
    [-0.04, 2.40, -0.49, -1.59, 0.10],
    [0.11, 1.32, 0.04, -2.54, 0.07],
    [-0.09, 1.79, 0.47, -1.94, -0.14],
];
const COEF_D: [[f64; 5]; 5] = [
    [-0.32, -0.13, 3.25, -0.75, 0.79],
    [-0.46, 0.24, 3.05, -0.77, 0.89],
    [0.02, -0.55, 3.68, 0.55, 0.68],
    [-0.49, -0.05, 2.73, -0.18, 0.63],
    [-0.47, 0.28, 2.99, 0.78, 0.66],
];

/// True coefficients: 10 groups of 5, the last five groups zero.
pub fn scenario_coefficients(scenario: Scenario) -> GroupedBeta {
    let table = match scenario {
        Scenario::A => &COEF_A,
        Scenario::B => &COEF_B,
        Scenario::C => &COEF_C,
        Scenario::D => &COEF_D,
    };
    let mut groups = vec![vec![0.0; COEFS_PER_SENSOR]; SENSOR_COUNT];
    for (j, group) in groups.iter_mut().take(EFFECTIVE_SENSORS).enumerate() {
        for (k, v) in group.iter_mut().enumerate() {
            *v = table[k][j];
        }
    }
    GroupedBeta::from_groups(&groups)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub n: usize,
    pub horizon: usize,
    pub alpha: f64,
    pub weibull_shape: f64,
    pub weibull_scale: f64,
    pub seed: u64,
    /// Coefficients used to decide failures; the scenario table by default.
    pub beta_true: GroupedBeta,
    /// End a failed unit's record at the first cycle where its index reaches
    /// `α`, so the recorded event time is the failure time. When false the
    /// record always runs to `min(⌈C⌉, horizon)`.
    pub stop_at_crossing: bool,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, n: usize, seed: u64) -> Self {
        let (shape, scale) = scenario.default_weibull();
        Self {
            scenario,
            n,
            horizon: HORIZON,
            alpha: 5f64.exp(),
            weibull_shape: shape,
            weibull_scale: scale,
            seed,
            beta_true: scenario_coefficients(scenario),
            stop_at_crossing: true,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.n == 0 {
            return Err(SimError::Invalid("n must be positive".into()));
        }
        if self.horizon < 2 {
            return Err(SimError::Invalid("horizon must be at least 2 cycles".into()));
        }
        if !(self.weibull_shape > 0.0 && self.weibull_scale > 0.0) {
            return Err(SimError::Invalid("Weibull parameters must be positive".into()));
        }
        let expected = SENSOR_COUNT * COEFS_PER_SENSOR;
        if self.beta_true.as_slice().len() != expected || self.beta_true.group_count() != SENSOR_COUNT {
            return Err(SimError::Invalid(format!(
                "beta_true must have {SENSOR_COUNT} groups of {COEFS_PER_SENSOR}"
            )));
        }
        Ok(())
    }
}

/// Per-unit random factors shared across its sensors.
struct UnitDraw {
    speed: f64,
    offset: f64,
}

/// Readings of all sensors over cycles `1..=horizon`.
///
/// Catalog (t in hundreds of cycles, s the unit's wear speed):
/// 1. `s·t² + N(0, 0.5)`            quadratic, effective
/// 2. `s·t + N(0, 0.2)`             linear, effective
/// 3. `N(0, 1)`                     pure noise, effective
/// 4. `-s·t + o + U(-0.3, 0.3)`     linear, effective
/// 5. `-0.5·s·t² + N(0, 0.5)`       quadratic, effective
/// 6. `5 + N(0, 0.5)`               constant
/// 7. `ln(1 + 100t) + U(-1, 1)`     log
/// 8. `0.5·t + N(0, 0.5)`           linear
/// 9. `2 + U(-1, 1)`                constant
/// 10. `-ln(1 + 2t) + N(0, 0.3)`    log
fn unit_signals(horizon: usize, draw: &UnitDraw, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = |sd: f64| Normal::new(0.0, sd).expect("positive sd");
    let u = |half: f64| Uniform::new(-half, half).expect("non-empty range");
    let (n02, n03, n05, n1) = (n(0.2), n(0.3), n(0.5), n(1.0));
    let (u03, u1) = (u(0.3), u(1.0));
    let s = draw.speed;
    (1..=horizon)
        .map(|c| {
            let t = c as f64 / 100.0;
            vec![
                s * t * t + n05.sample(rng),
                s * t + n02.sample(rng),
                n1.sample(rng),
                -s * t + draw.offset + u03.sample(rng),
                -0.5 * s * t * t + n05.sample(rng),
                5.0 + n05.sample(rng),
                (1.0 + 100.0 * t).ln() + u1.sample(rng),
                0.5 * t + n05.sample(rng),
                2.0 + u1.sample(rng),
                -(1.0 + 2.0 * t).ln() + n03.sample(rng),
            ]
        })
        .collect()
}

fn unit_rng(seed: u64, unit: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(unit as u64);
    rng
}

pub fn sensor_names() -> Vec<String> {
    (1..=SENSOR_COUNT).map(|j| format!("x{j}")).collect()
}

/// Signal histories for `n` units over the full horizon, before censoring.
pub fn generate_signals(n: usize, horizon: usize, seed: u64) -> Vec<Vec<Vec<f64>>> {
    (0..n)
        .map(|i| {
            let mut rng = unit_rng(seed, i);
            let draw = draw_unit(&mut rng);
            unit_signals(horizon, &draw, &mut rng)
        })
        .collect()
}

fn draw_unit(rng: &mut impl Rng) -> UnitDraw {
    UnitDraw {
        speed: rng.random_range(0.8..1.6),
        offset: rng.random_range(-0.5..0.5),
    }
}

/// A generated fleet with the basis and index values that decided each
/// unit's status.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub dataset: Dataset,
    pub basis: EffectBasis,
    pub beta_true: GroupedBeta,
    /// True `u(T)` per unit.
    pub final_exposure: Vec<f64>,
}

impl SimulatedData {
    pub fn failed_fraction(&self) -> f64 {
        self.dataset.failed_count() as f64 / self.dataset.len() as f64
    }
}

/// Generates `spec.n` units: Weibull censoring `T = min(⌈C⌉, horizon)`,
/// records truncated at `T`, spline bases (2 interior knots) built on the
/// truncated pooled signals, and `δ = [u(T) ≥ α]` under `beta_true`.
pub fn generate_dataset(spec: &ScenarioSpec) -> Result<SimulatedData, SimError> {
    let sim = generate_unchecked(spec)?;
    let proportion = sim.failed_fraction();
    if proportion > MAX_FAILED_FRACTION {
        return Err(SimError::Calibration {
            proportion,
            shape: spec.weibull_shape,
            scale: spec.weibull_scale,
        });
    }
    Ok(sim)
}

fn generate_unchecked(spec: &ScenarioSpec) -> Result<SimulatedData, SimError> {
    spec.validate()?;
    let weibull = Weibull::new(spec.weibull_scale, spec.weibull_shape)
        .map_err(|e| SimError::Invalid(e.to_string()))?;
    let units = (0..spec.n)
        .map(|i| {
            let mut rng = unit_rng(spec.seed, i);
            let draw = draw_unit(&mut rng);
            let c: f64 = weibull.sample(&mut rng);
            let end = (c.ceil() as usize).clamp(2, spec.horizon);
            let mut signals = unit_signals(spec.horizon, &draw, &mut rng);
            signals.truncate(end);
            UnitRecord {
                unit_id: i as u32 + 1,
                cycles: (1..=end).map(|c| c as f64).collect(),
                signals,
                failed: false,
            }
        })
        .collect();
    let mut dataset = Dataset::new(sensor_names(), units)?;
    // The generating basis is fixed on the censoring-truncated histories.
    let basis = EffectBasis::build(&dataset, EffectKind::Spline, INTERIOR_KNOTS)?;
    let params = ModelParams {
        beta: spec.beta_true.clone(),
        sigma: 1.0,
        alpha: spec.alpha,
    };
    let mut final_exposure = Vec::with_capacity(dataset.len());
    for unit in &mut dataset.units {
        let path = cumulative_exposure(unit, &basis, &params);
        // Grid points are (0, 0) followed by one per cycle.
        let offset = path.points.len() - unit.len();
        let crossing = (0..unit.len()).find(|&k| path.points[k + offset].1 >= spec.alpha);
        let end = match crossing {
            Some(k) if spec.stop_at_crossing => (k + 1).max(2),
            _ => unit.len(),
        };
        unit.cycles.truncate(end);
        unit.signals.truncate(end);
        let u = path.points[end - 1 + offset].1;
        unit.failed = u >= spec.alpha;
        final_exposure.push(u);
    }
    Ok(SimulatedData {
        dataset,
        basis,
        beta_true: spec.beta_true.clone(),
        final_exposure,
    })
}

/// Failed fraction over a pilot fleet, without the calibration check.
pub fn pilot_failed_fraction(spec: &ScenarioSpec) -> Result<f64, SimError> {
    Ok(generate_unchecked(spec)?.failed_fraction())
}

/// Bisects the Weibull scale (shape held fixed) until the pilot failed
/// fraction is within `tol` of `target`.
pub fn calibrate_weibull_scale(
    spec: &ScenarioSpec,
    target: f64,
    tol: f64,
    bounds: (f64, f64),
) -> Result<f64, SimError> {
    let (mut lo, mut hi) = bounds;
    let mut probe = spec.clone();
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        probe.weibull_scale = mid;
        let p = pilot_failed_fraction(&probe)?;
        log::debug!("scale {mid:.2}: failed {p:.3}");
        if (p - target).abs() <= tol {
            return Ok(mid);
        }
        // Longer records fail more often.
        if p < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
