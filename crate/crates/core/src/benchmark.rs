//! Replicated simulation studies comparing the spline index with variable
//! selection (DI-VS), without selection (DI-NVS) and with linear effects
//! (DI-VSL).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::{fit, FitConfig, FitError, FitResult};
use crate::evaluation::{classify, practical_threshold};
use crate::exposure::EffectKind;
use crate::simulation::{generate_dataset, Scenario, ScenarioSpec, SimError, EFFECTIVE_SENSORS, SENSOR_COUNT};

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("scenario {scenario}, n = {n}, replicate {replicate}: {source}")]
    Simulation {
        scenario: Scenario,
        n: usize,
        replicate: usize,
        #[source]
        source: SimError,
    },
    #[error("scenario {scenario}, n = {n}, replicate {replicate}, {method}: {source}")]
    Fit {
        scenario: Scenario,
        n: usize,
        replicate: usize,
        method: Method,
        #[source]
        source: FitError,
    },
    #[error("invalid benchmark settings: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
pub enum Method {
    #[serde(rename = "DI-VS")]
    #[value(name = "di-vs")]
    DiVs,
    #[serde(rename = "DI-NVS")]
    #[value(name = "di-nvs")]
    DiNvs,
    #[serde(rename = "DI-VSL")]
    #[value(name = "di-vsl")]
    DiVsl,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::DiVs, Method::DiNvs, Method::DiVsl];

    /// The fit configuration this method derives from a base configuration.
    pub fn configure(self, base: &FitConfig) -> FitConfig {
        match self {
            Method::DiVs => base.clone(),
            Method::DiNvs => base.clone().without_selection(),
            Method::DiVsl => FitConfig {
                effect: EffectKind::Linear,
                ..base.clone()
            },
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::DiVs => "DI-VS",
            Method::DiNvs => "DI-NVS",
            Method::DiVsl => "DI-VSL",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub scenarios: Vec<Scenario>,
    pub sizes: Vec<usize>,
    pub replicates: usize,
    pub methods: Vec<Method>,
    /// Held-out units generated with each training fleet.
    pub n_test: usize,
    /// Quantile `p` of the practical threshold used for test classification.
    pub quantile: f64,
    pub seed: u64,
    pub fit: FitConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            scenarios: vec![Scenario::A],
            sizes: vec![50, 100],
            replicates: 20,
            methods: Method::ALL.to_vec(),
            n_test: 200,
            quantile: 0.01,
            seed: 0,
            fit: FitConfig::default(),
        }
    }
}

/// One fitted replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub scenario: Scenario,
    pub n: usize,
    pub replicate: usize,
    pub method: Method,
    pub data_seed: u64,
    pub train_failed: usize,
    pub fnr: f64,
    pub fpr: f64,
    pub ter: f64,
    pub sigma_hat: f64,
    pub lambda_selected: f64,
    /// Selected sensors as `;`-joined 1-based indices.
    pub selected: String,
    pub effective_retained: usize,
    pub no_effect_excluded: usize,
    pub correctly_specified: usize,
    pub converged: bool,
}

/// Cell means over replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub scenario: Scenario,
    pub n: usize,
    pub replicates: usize,
    pub mean_fnr: f64,
    pub mean_fpr: f64,
    pub mean_ter: f64,
    pub mean_effective_retained: f64,
    pub mean_no_effect_excluded: f64,
    pub mean_correctly_specified: f64,
    pub mean_sigma_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub records: Vec<ReplicateRecord>,
    pub summary: Vec<SummaryRow>,
}

/// Seed of the fleet behind one `(scenario, n, replicate)` cell; every
/// method sees the same data.
pub fn replicate_seed(seed: u64, scenario: Scenario, n: usize, replicate: usize) -> u64 {
    // SplitMix64 finalizer over the packed cell coordinates.
    let mut z = seed
        ^ (scenario as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (n as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ (replicate as u64).wrapping_mul(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Selection counts against the known truth (sensors `0..5` effective).
pub fn selection_counts(selected: &[usize]) -> (usize, usize, usize) {
    let retained = selected.iter().filter(|&&j| j < EFFECTIVE_SENSORS).count();
    let included_null = selected.iter().filter(|&&j| j >= EFFECTIVE_SENSORS).count();
    let excluded = (SENSOR_COUNT - EFFECTIVE_SENSORS) - included_null;
    (retained, excluded, retained + excluded)
}

struct Cell {
    scenario: Scenario,
    n: usize,
    replicate: usize,
}

/// Runs every `(scenario, n, replicate, method)` fit. Fleets are generated
/// with `n + n_test` units; the first `n` train, the rest test.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport, BenchmarkError> {
    if cfg.replicates == 0 || cfg.sizes.is_empty() || cfg.scenarios.is_empty() || cfg.methods.is_empty() {
        return Err(BenchmarkError::Invalid(
            "scenarios, sizes, methods and replicates must be non-empty".into(),
        ));
    }
    if cfg.n_test == 0 {
        return Err(BenchmarkError::Invalid("n_test must be positive".into()));
    }
    let mut cells = Vec::new();
    for &scenario in &cfg.scenarios {
        for &n in &cfg.sizes {
            for replicate in 0..cfg.replicates {
                cells.push(Cell { scenario, n, replicate });
            }
        }
    }
    let records: Vec<Vec<ReplicateRecord>> = cells
        .par_iter()
        .map(|cell| run_cell(cfg, cell))
        .collect::<Result<_, _>>()?;
    let records: Vec<ReplicateRecord> = records.into_iter().flatten().collect();
    let summary = summarize(&records);
    Ok(BenchmarkReport { records, summary })
}

fn run_cell(cfg: &BenchmarkConfig, cell: &Cell) -> Result<Vec<ReplicateRecord>, BenchmarkError> {
    let Cell { scenario, n, replicate } = *cell;
    let data_seed = replicate_seed(cfg.seed, scenario, n, replicate);
    let spec = ScenarioSpec::new(scenario, n + cfg.n_test, data_seed);
    let sim = generate_dataset(&spec).map_err(|source| BenchmarkError::Simulation {
        scenario,
        n,
        replicate,
        source,
    })?;
    let train = sim.dataset.subset(&(0..n).collect::<Vec<_>>());
    let test = sim.dataset.subset(&(n..n + cfg.n_test).collect::<Vec<_>>());
    let mut out = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let fit_cfg = FitConfig {
            seed: data_seed,
            ..method.configure(&cfg.fit)
        };
        let started = std::time::Instant::now();
        let result = fit(&train, &fit_cfg).map_err(|source| BenchmarkError::Fit {
            scenario,
            n,
            replicate,
            method,
            source,
        })?;
        log::info!(
            "scenario {scenario} n {n} replicate {replicate} {method}: {:.1}s",
            started.elapsed().as_secs_f64()
        );
        out.push(record(cfg, cell, method, data_seed, train.failed_count(), &result, &test));
    }
    Ok(out)
}

fn record(
    cfg: &BenchmarkConfig,
    cell: &Cell,
    method: Method,
    data_seed: u64,
    train_failed: usize,
    result: &FitResult,
    test: &crate::exposure::Dataset,
) -> ReplicateRecord {
    let model = &result.model;
    let threshold = practical_threshold(model.alpha, model.sigma, cfg.quantile);
    let report = classify(test, model, threshold);
    let (retained, excluded, correct) = selection_counts(&model.selected_sensors);
    ReplicateRecord {
        scenario: cell.scenario,
        n: cell.n,
        replicate: cell.replicate,
        method,
        data_seed,
        train_failed,
        fnr: report.fnr,
        fpr: report.fpr,
        ter: report.ter,
        sigma_hat: model.sigma,
        lambda_selected: result.lambda_selected,
        selected: model
            .selected_sensors
            .iter()
            .map(|j| (j + 1).to_string())
            .collect::<Vec<_>>()
            .join(";"),
        effective_retained: retained,
        no_effect_excluded: excluded,
        correctly_specified: correct,
        converged: result.converged(),
    }
}

pub fn summarize(records: &[ReplicateRecord]) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<(Method, Scenario, usize), Vec<&ReplicateRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.method, r.scenario, r.n)).or_default().push(r);
    }
    cells
        .into_iter()
        .map(|((method, scenario, n), rows)| {
            let mean = |f: &dyn Fn(&ReplicateRecord) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64;
            SummaryRow {
                method,
                scenario,
                n,
                replicates: rows.len(),
                mean_fnr: mean(&|r| r.fnr),
                mean_fpr: mean(&|r| r.fpr),
                mean_ter: mean(&|r| r.ter),
                mean_effective_retained: mean(&|r| r.effective_retained as f64),
                mean_no_effect_excluded: mean(&|r| r.no_effect_excluded as f64),
                mean_correctly_specified: mean(&|r| r.correctly_specified as f64),
                mean_sigma_hat: mean(&|r| r.sigma_hat),
            }
        })
        .collect()
}
