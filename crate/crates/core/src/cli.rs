//! Command-line front end: argument parsing, config-file overrides, run
//! manifests and the output files of every command.
//!
//! Every command resolves its flags into a serializable run configuration,
//! lets a JSON config file override any part of it, and records the resolved
//! configuration in `manifest.json` next to its outputs. Passing that
//! manifest's `config` object back through `--config` reproduces the run.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::benchmark::{run_benchmark, BenchmarkConfig, BenchmarkError, Method};
use crate::estimation::{fit, FitConfig, FitError, FitResult};
use crate::evaluation::{ale_main_effect, classify, practical_threshold, ClassificationReport, UnitPrediction};
use crate::exposure::{DataError, Dataset};
use crate::ingestion::{
    load_jet_engine_sources, load_long_csv, split, subsample, write_csv, DatasetManifest, IngestError,
    JetEngineSource, Schema, SplitInfo,
};
use crate::model::{ModelFile, ModelFileError};
use crate::simulation::{generate_dataset, Scenario, ScenarioSpec, SimError};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_CONVERGENCE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Benchmark(#[from] BenchmarkError),
    #[error(transparent)]
    Model(#[from] ModelFileError),
    #[error("optimizer did not converge within its budget: {0}")]
    Convergence(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Ingest(_) | CliError::Data(_) | CliError::Simulation(_) => EXIT_DATA,
            CliError::Model(ModelFileError::Io { .. }) => EXIT_FAILURE,
            CliError::Model(_) => EXIT_DATA,
            CliError::Fit(e) => fit_exit_code(e),
            CliError::Benchmark(BenchmarkError::Fit { source, .. }) => fit_exit_code(source),
            CliError::Benchmark(BenchmarkError::Simulation { .. }) => EXIT_DATA,
            CliError::Benchmark(BenchmarkError::Invalid(_)) => EXIT_USAGE,
            CliError::Convergence(_) => EXIT_CONVERGENCE,
            CliError::Io { .. } | CliError::Output { .. } => EXIT_FAILURE,
        }
    }
}

fn fit_exit_code(e: &FitError) -> i32 {
    match e {
        FitError::Config(_) => EXIT_USAGE,
        FitError::Data(_) | FitError::StratificationFailed { .. } => EXIT_DATA,
        FitError::InfeasibleStart(_) => EXIT_CONVERGENCE,
    }
}

#[derive(Debug, Parser)]
#[command(name = "degidx", version, about = "Degradation index from multi-channel sensor histories")]
pub struct Cli {
    /// Worker threads for parallel fitting (defaults to all cores).
    #[arg(long, global = true, env = "DEGIDX_WORKERS")]
    pub workers: Option<usize>,
    /// Log filter, e.g. `info` or `degidx=debug`.
    #[arg(long, global = true, default_value = "info", env = "DEGIDX_LOG")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic fleet in the long CSV schema.
    Simulate(SimulateArgs),
    /// Fit a degradation index and write the model file.
    Fit(FitArgs),
    /// Score units with a fitted model.
    Predict(PredictArgs),
    /// Error rates of a predictions file.
    Evaluate(EvaluateArgs),
    /// Accumulated local effect curves of a fitted model.
    Ale(AleArgs),
    /// Replicated simulation study.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Output directory (created if missing).
    #[arg(long, short)]
    pub out_dir: PathBuf,
    /// JSON file whose fields override the flag values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset in the long CSV schema.
    #[arg(long, conflicts_with = "jet_engine")]
    pub data: Option<PathBuf>,
    /// Jet-engine text file, optionally `TRAIN:TRUTH` with a remaining-life
    /// file; repeat to combine files.
    #[arg(long)]
    pub jet_engine: Vec<String>,
    /// Keep this many failed units (seeded subset).
    #[arg(long, requires = "subset_censored")]
    pub subset_failed: Option<usize>,
    /// Keep this many censored units (seeded subset).
    #[arg(long, requires = "subset_failed")]
    pub subset_censored: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub subset_seed: u64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub scenario: Scenario,
    #[arg(long, short)]
    pub n: usize,
    /// Extra units from the same fleet written to `test.csv`.
    #[arg(long, default_value_t = 0)]
    pub n_test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Override the scenario's Weibull scale.
    #[arg(long)]
    pub weibull_scale: Option<f64>,
    /// Keep failed records running to the censoring time.
    #[arg(long)]
    pub literal_status: bool,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Fit on a stratified training fraction; the rest is written to `test.csv`.
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// No selection: `λ = 0`, single stage.
    #[arg(long, conflicts_with = "linear")]
    pub no_selection: bool,
    /// Linear sensor effects.
    #[arg(long)]
    pub linear: bool,
    /// Exit with a convergence error when a final fit exhausts its budget.
    #[arg(long)]
    pub strict: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Comma-separated `λ` grid (multiplied by the unit count).
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Quantile `p` of the practical threshold.
    #[arg(long, default_value_t = 0.01)]
    pub quantile: f64,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// `predictions.csv` written by `predict`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Dataset supplying the true status (defaults to the predictions' own column).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct AleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Sensor name; all selected sensors when omitted.
    #[arg(long)]
    pub sensor: Option<String>,
    #[arg(long, default_value_t = 40)]
    pub bins: usize,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_value = "A")]
    pub scenarios: Vec<Scenario>,
    #[arg(long, value_delimiter = ',', default_value = "50,100")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub replicates: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "di-vs,di-nvs,di-vsl")]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = 200)]
    pub n_test: usize,
    #[arg(long, default_value_t = 0.01)]
    pub quantile: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Where a command reads units from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schema", rename_all = "snake_case")]
pub enum DataSource {
    LongCsv {
        path: PathBuf,
        subset: Option<Subset>,
    },
    JetEngine {
        sources: Vec<JetEngineSource>,
        subset: Option<Subset>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subset {
    pub failed: usize,
    pub censored: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateRun {
    pub spec: ScenarioSpec,
    pub n_test: usize,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRun {
    pub data: DataSource,
    pub split: Option<SplitSpec>,
    pub method: Method,
    /// Base configuration; `method` derives the one actually fitted.
    pub fit: FitConfig,
    pub strict: bool,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRun {
    pub model: PathBuf,
    pub data: DataSource,
    pub quantile: f64,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateRun {
    pub predictions: PathBuf,
    pub truth: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AleRun {
    pub model: PathBuf,
    pub data: DataSource,
    pub sensor: Option<String>,
    pub bins: usize,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRun {
    pub benchmark: BenchmarkConfig,
    pub out_dir: PathBuf,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a C,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    datasets: Vec<DatasetManifest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    extra: Option<Value>,
    outputs: Vec<String>,
}

/// One row of `predictions.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub unit_id: u32,
    pub u_end: f64,
    pub threshold: f64,
    pub predicted_failed: bool,
    pub true_failed: bool,
}

/// `rates.csv` contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatesRow {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fnr: f64,
    pub fpr: f64,
    pub ter: f64,
    pub fnr_defined: bool,
    pub fpr_defined: bool,
}

impl From<&ClassificationReport> for RatesRow {
    fn from(r: &ClassificationReport) -> Self {
        Self {
            tp: r.tp,
            fp: r.fp,
            tn: r.tn,
            fn_: r.fn_,
            fnr: r.fnr,
            fpr: r.fpr,
            ter: r.ter,
            fnr_defined: r.fnr_defined,
            fpr_defined: r.fpr_defined,
        }
    }
}

#[derive(Debug, Serialize)]
struct StageDiagnostics<'a> {
    lambda: f64,
    weights: &'a [f64],
    objective: f64,
    start_objective: f64,
    evals: usize,
    restarts: usize,
    converged: bool,
    sigma: f64,
    objective_trace: &'a [f64],
    sigma_trace: &'a [f64],
}

/// Recursively overlays `over` onto `base`: objects merge key by key, any
/// other value replaces.
pub fn merge_json(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies an optional JSON config file on top of flag-derived settings.
pub fn resolve<T: Serialize + DeserializeOwned>(from_flags: T, config: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = config else {
        return Ok(from_flags);
    };
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let over: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: invalid config JSON: {e}", path.display())))?;
    let mut base = serde_json::to_value(&from_flags).expect("run configs serialize");
    merge_json(&mut base, over);
    serde_json::from_value(base).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn data_source(args: &DataArgs) -> Result<DataSource, CliError> {
    let subset = match (args.subset_failed, args.subset_censored) {
        (Some(failed), Some(censored)) => Some(Subset {
            failed,
            censored,
            seed: args.subset_seed,
        }),
        _ => None,
    };
    match (&args.data, args.jet_engine.is_empty()) {
        (Some(path), true) => Ok(DataSource::LongCsv {
            path: path.clone(),
            subset,
        }),
        (None, false) => {
            let sources = args
                .jet_engine
                .iter()
                .map(|s| match s.split_once(':') {
                    Some((train, truth)) => JetEngineSource {
                        path: train.into(),
                        truth: Some(truth.into()),
                    },
                    None => JetEngineSource {
                        path: s.into(),
                        truth: None,
                    },
                })
                .collect();
            Ok(DataSource::JetEngine { sources, subset })
        }
        _ => Err(CliError::Usage("give either --data or --jet-engine".into())),
    }
}

/// Loads the units of a data source.
pub fn load_source(source: &DataSource) -> Result<(Dataset, DatasetManifest), CliError> {
    let (data, mut manifest, subset) = match source {
        DataSource::LongCsv { path, subset } => {
            let (d, m) = load_long_csv(path)?;
            (d, m, subset)
        }
        DataSource::JetEngine { sources, subset } => {
            let (d, m) = load_jet_engine_sources(sources)?;
            (d, m, subset)
        }
    };
    let Some(s) = subset else {
        return Ok((data, manifest));
    };
    let data = subsample(&data, s.failed, s.censored, s.seed)?;
    manifest.units = data.len();
    manifest.failed = s.failed;
    manifest.censored = s.censored;
    Ok((data, manifest))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn output_err<E: std::error::Error + Send + Sync + 'static>(path: &Path) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Output {
        path: path.to_path_buf(),
        source: Box::new(e),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(output_err(path))?;
    std::fs::write(path, text + "\n").map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(output_err(path))?;
    for r in rows {
        w.serialize(r).map_err(output_err(path))?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_manifest<C: Serialize>(
    dir: &Path,
    command: &'static str,
    config: &C,
    datasets: Vec<DatasetManifest>,
    extra: Option<Value>,
    outputs: &[&str],
) -> Result<(), CliError> {
    let manifest = RunManifest {
        tool: "degidx",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config,
        datasets,
        extra,
        outputs: outputs.iter().map(|s| (*s).to_string()).collect(),
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

#[derive(Debug, Serialize)]
struct TrajectoryRow {
    unit_id: u32,
    cycle: f64,
    u: f64,
}

fn write_trajectories(path: &Path, trajectories: &[crate::exposure::Trajectory]) -> Result<(), CliError> {
    let rows: Vec<TrajectoryRow> = trajectories
        .iter()
        .flat_map(|t| {
            t.points.iter().map(move |&(cycle, u)| TrajectoryRow {
                unit_id: t.unit_id,
                cycle,
                u,
            })
        })
        .collect();
    write_rows(path, &rows)
}

pub fn cmd_simulate(run: &SimulateRun) -> Result<(), CliError> {
    if run.spec.n == 0 {
        return Err(CliError::Usage("n must be positive".into()));
    }
    let total = ScenarioSpec {
        n: run.spec.n + run.n_test,
        ..run.spec.clone()
    };
    let sim = generate_dataset(&total)?;
    create_dir(&run.out_dir)?;
    let n = run.spec.n;
    let data = sim.dataset.subset(&(0..n).collect::<Vec<_>>());
    write_csv(&data, &run.out_dir.join("data.csv"))?;
    let mut outputs = vec!["data.csv"];
    let mut datasets = vec![DatasetManifest::describe(
        vec!["data.csv".into()],
        Schema::LongCsv,
        &data,
        Vec::new(),
    )];
    if run.n_test > 0 {
        let test = sim.dataset.subset(&(n..n + run.n_test).collect::<Vec<_>>());
        write_csv(&test, &run.out_dir.join("test.csv"))?;
        outputs.push("test.csv");
        datasets.push(DatasetManifest::describe(
            vec!["test.csv".into()],
            Schema::LongCsv,
            &test,
            Vec::new(),
        ));
    }
    let extra = serde_json::json!({
        "failed_fraction": sim.failed_fraction(),
        "beta_true": sim.beta_true.to_groups(),
    });
    write_manifest(&run.out_dir, "simulate", run, datasets, Some(extra), &outputs)?;
    log::info!(
        "scenario {}: {} units, {} failed",
        run.spec.scenario,
        data.len(),
        data.failed_count()
    );
    Ok(())
}

/// Fits the configured method; returns the result and the training data.
pub fn cmd_fit(run: &FitRun) -> Result<FitResult, CliError> {
    let (data, mut manifest) = load_source(&run.data)?;
    let (train, test) = match &run.split {
        Some(s) => {
            let (train, test) = split(&data, s.train_fraction, s.seed)?;
            manifest.split = Some(SplitInfo {
                seed: s.seed,
                train_fraction: s.train_fraction,
                test_fraction: 1.0 - s.train_fraction,
                train_units: train.len(),
                test_units: test.len(),
            });
            (train, Some(test))
        }
        None => (data, None),
    };
    let cfg = run.method.configure(&run.fit);
    let result = fit(&train, &cfg)?;
    create_dir(&run.out_dir)?;
    let mut outputs = vec!["model.json", "cv_table.csv", "diagnostics.json", "trajectories.csv"];
    ModelFile::new(&result, &cfg, Some(manifest.clone())).save(&run.out_dir.join("model.json"))?;
    write_rows(&run.out_dir.join("cv_table.csv"), &result.cv_table)?;
    let stages: Vec<StageDiagnostics> = result
        .stages
        .iter()
        .map(|s| StageDiagnostics {
            lambda: s.lambda,
            weights: &s.weights,
            objective: s.final_fit.objective,
            start_objective: s.final_fit.start_objective,
            evals: s.final_fit.evals,
            restarts: s.final_fit.restarts,
            converged: s.final_fit.converged,
            sigma: s.final_fit.sigma,
            objective_trace: &s.final_fit.objective_trace,
            sigma_trace: &s.final_fit.sigma_trace,
        })
        .collect();
    write_json(
        &run.out_dir.join("diagnostics.json"),
        &serde_json::json!({
            "converged": result.converged(),
            "lambda_selected": result.lambda_selected,
            "sigma_hat": result.model.sigma,
            "selected_sensors": result.model.selected_sensors.iter()
                .map(|&j| result.model.sensor_names[j].as_str()).collect::<Vec<_>>(),
            "stages": stages,
        }),
    )?;
    write_trajectories(&run.out_dir.join("trajectories.csv"), &result.trajectories)?;
    if let Some(test) = &test {
        write_csv(&train, &run.out_dir.join("train.csv"))?;
        write_csv(test, &run.out_dir.join("test.csv"))?;
        outputs.extend(["train.csv", "test.csv"]);
    }
    let extra = serde_json::json!({ "effective_fit": cfg });
    write_manifest(&run.out_dir, "fit", run, vec![manifest], Some(extra), &outputs)?;
    log::info!(
        "{}: λ = {}, σ = {:.5}, selected {:?}",
        run.method,
        result.lambda_selected,
        result.model.sigma,
        result.model.selected_sensors.iter().map(|&j| &result.model.sensor_names[j]).collect::<Vec<_>>()
    );
    if run.strict && !result.converged() {
        return Err(CliError::Convergence(format!(
            "a final fit stopped on its evaluation budget; see {}",
            run.out_dir.join("diagnostics.json").display()
        )));
    }
    if !result.converged() {
        log::warn!("a final fit stopped on its evaluation budget (use --strict to fail)");
    }
    Ok(result)
}

fn check_layout(model: &ModelFile, data: &Dataset) -> Result<(), CliError> {
    if model.model.sensor_names != data.sensor_names {
        return Err(CliError::Usage(format!(
            "dataset sensors {:?} do not match the model's {:?}",
            data.sensor_names, model.model.sensor_names
        )));
    }
    Ok(())
}

pub fn cmd_predict(run: &PredictRun) -> Result<ClassificationReport, CliError> {
    if !(run.quantile > 0.0 && run.quantile < 1.0) {
        return Err(CliError::Usage(format!("quantile {} outside (0, 1)", run.quantile)));
    }
    let model = ModelFile::load(&run.model)?;
    let (data, manifest) = load_source(&run.data)?;
    check_layout(&model, &data)?;
    let m = &model.model;
    let threshold = practical_threshold(m.alpha, m.sigma, run.quantile);
    let report = classify(&data, m, threshold);
    create_dir(&run.out_dir)?;
    let rows: Vec<PredictionRow> = report
        .predictions
        .iter()
        .map(|p| PredictionRow {
            unit_id: p.unit_id,
            u_end: p.u_at_end,
            threshold,
            predicted_failed: p.predicted_failed,
            true_failed: p.true_failed,
        })
        .collect();
    write_rows(&run.out_dir.join("predictions.csv"), &rows)?;
    write_trajectories(&run.out_dir.join("trajectories.csv"), &m.trajectories(&data))?;
    write_rows(&run.out_dir.join("rates.csv"), &[RatesRow::from(&report)])?;
    write_manifest(
        &run.out_dir,
        "predict",
        run,
        vec![manifest],
        Some(serde_json::json!({ "threshold": threshold })),
        &["predictions.csv", "trajectories.csv", "rates.csv"],
    )?;
    log::info!(
        "threshold {threshold:.4}: FNR {:.4}, FPR {:.4}, TER {:.4}",
        report.fnr,
        report.fpr,
        report.ter
    );
    Ok(report)
}

pub fn cmd_evaluate(run: &EvaluateRun) -> Result<ClassificationReport, CliError> {
    let path = &run.predictions;
    let mut reader = csv::Reader::from_path(path).map_err(|e| IngestError::Csv {
        path: path.clone(),
        source: e,
    })?;
    let rows: Vec<PredictionRow> = reader
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| IngestError::Csv {
            path: path.clone(),
            source: e,
        })?;
    let mut datasets = Vec::new();
    let truth: Option<HashMap<u32, bool>> = match &run.truth {
        Some(p) => {
            let (d, m) = load_long_csv(p)?;
            datasets.push(m);
            Some(d.units.iter().map(|u| (u.unit_id, u.failed)).collect())
        }
        None => None,
    };
    let mut predictions = Vec::with_capacity(rows.len());
    for r in &rows {
        let true_failed = match &truth {
            Some(t) => *t.get(&r.unit_id).ok_or_else(|| DataError::InvalidUnit {
                unit: r.unit_id,
                reason: "missing from the truth dataset".into(),
            })?,
            None => r.true_failed,
        };
        predictions.push(UnitPrediction {
            unit_id: r.unit_id,
            u_at_end: r.u_end,
            predicted_failed: r.predicted_failed,
            true_failed,
        });
    }
    let threshold = rows.first().map_or(f64::NAN, |r| r.threshold);
    let report = ClassificationReport::from_predictions(predictions, threshold);
    create_dir(&run.out_dir)?;
    write_rows(&run.out_dir.join("rates.csv"), &[RatesRow::from(&report)])?;
    write_manifest(&run.out_dir, "evaluate", run, datasets, None, &["rates.csv"])?;
    println!("FNR {:.6}  FPR {:.6}  TER {:.6}", report.fnr, report.fpr, report.ter);
    Ok(report)
}

#[derive(Debug, Serialize)]
struct AleRow {
    z: f64,
    x: f64,
    effect: f64,
    /// Observations in the bin ending at this grid point.
    bin_count: usize,
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn cmd_ale(run: &AleRun) -> Result<Vec<String>, CliError> {
    if run.bins == 0 {
        return Err(CliError::Usage("bins must be positive".into()));
    }
    let model = ModelFile::load(&run.model)?;
    let (data, manifest) = load_source(&run.data)?;
    check_layout(&model, &data)?;
    let m = &model.model;
    let sensors: Vec<usize> = match &run.sensor {
        Some(name) => vec![m
            .sensor_names
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| CliError::Usage(format!("unknown sensor `{name}`")))?],
        None => m.selected_sensors.clone(),
    };
    create_dir(&run.out_dir)?;
    let mut outputs = Vec::new();
    for j in sensors {
        let curve = ale_main_effect(m, &data, j, run.bins);
        let std = *m.basis.effects[j].standardization();
        let rows: Vec<AleRow> = curve
            .grid
            .iter()
            .zip(&curve.effect)
            .enumerate()
            .map(|(k, (&z, &effect))| AleRow {
                z,
                x: std.mean + std.std_dev * z,
                effect,
                bin_count: if k == 0 { 0 } else { curve.bin_counts[k - 1] },
            })
            .collect();
        let name = format!("ale_{}.csv", file_stem(&m.sensor_names[j]));
        write_rows(&run.out_dir.join(&name), &rows)?;
        outputs.push(name);
    }
    let refs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    write_manifest(&run.out_dir, "ale", run, vec![manifest], None, &refs)?;
    Ok(outputs)
}

pub fn cmd_benchmark(run: &BenchmarkRun) -> Result<crate::benchmark::BenchmarkReport, CliError> {
    let report = run_benchmark(&run.benchmark)?;
    create_dir(&run.out_dir)?;
    write_rows(&run.out_dir.join("audit.csv"), &report.records)?;
    write_rows(&run.out_dir.join("summary.csv"), &report.summary)?;
    write_manifest(&run.out_dir, "benchmark", run, Vec::new(), None, &["audit.csv", "summary.csv"])?;
    for s in &report.summary {
        println!(
            "{:<7} {} n={:<4} FNR {:.4}  FPR {:.4}  TER {:.4}  correct {:.2}",
            s.method.to_string(),
            s.scenario,
            s.n,
            s.mean_fnr,
            s.mean_fpr,
            s.mean_ter,
            s.mean_correctly_specified
        );
    }
    Ok(report)
}

/// Resolves the parsed arguments and runs the command.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => {
            let mut spec = ScenarioSpec::new(a.scenario, a.n, a.seed);
            if let Some(scale) = a.weibull_scale {
                spec.weibull_scale = scale;
            }
            spec.stop_at_crossing = !a.literal_status;
            let run = resolve(
                SimulateRun {
                    spec,
                    n_test: a.n_test,
                    out_dir: a.common.out_dir,
                },
                a.common.config.as_deref(),
            )?;
            cmd_simulate(&run)
        }
        Command::Fit(a) => {
            let mut base = FitConfig {
                seed: a.seed,
                ..FitConfig::default()
            };
            if let Some(k) = a.folds {
                base.folds = k;
            }
            if let Some(grid) = a.lambda_grid {
                base.lambda_grid = grid;
            }
            let method = if a.no_selection {
                Method::DiNvs
            } else if a.linear {
                Method::DiVsl
            } else {
                Method::DiVs
            };
            let run = resolve(
                FitRun {
                    data: data_source(&a.data)?,
                    split: a.train_frac.map(|f| SplitSpec {
                        train_fraction: f,
                        seed: a.split_seed,
                    }),
                    method,
                    fit: base,
                    strict: a.strict,
                    out_dir: a.common.out_dir,
                },
                a.common.config.as_deref(),
            )?;
            cmd_fit(&run).map(|_| ())
        }
        Command::Predict(a) => {
            let run = resolve(
                PredictRun {
                    model: a.model,
                    data: data_source(&a.data)?,
                    quantile: a.quantile,
                    out_dir: a.common.out_dir,
                },
                a.common.config.as_deref(),
            )?;
            cmd_predict(&run).map(|_| ())
        }
        Command::Evaluate(a) => {
            let run = resolve(
                EvaluateRun {
                    predictions: a.predictions,
                    truth: a.truth,
                    out_dir: a.common.out_dir,
                },
                a.common.config.as_deref(),
            )?;
            cmd_evaluate(&run).map(|_| ())
        }
        Command::Ale(a) => {
            let run = resolve(
                AleRun {
                    model: a.model,
                    data: data_source(&a.data)?,
                    sensor: a.sensor,
                    bins: a.bins,
                    out_dir: a.common.out_dir,
                },
                a.common.config.as_deref(),
            )?;
            cmd_ale(&run).map(|_| ())
        }
        Command::Benchmark(a) => {
            let run = resolve(
                BenchmarkRun {
                    benchmark: BenchmarkConfig {
                        scenarios: a.scenarios,
                        sizes: a.sizes,
                        replicates: a.replicates,
                        methods: a.methods,
                        n_test: a.n_test,
                        quantile: a.quantile,
                        seed: a.seed,
                        fit: FitConfig::default(),
                    },
                    out_dir: a.common.out_dir,
                },
                a.common.config.as_deref(),
            )?;
            cmd_benchmark(&run).map(|_| ())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn unknown_scenario_is_usage_error() {
        let err = Cli::try_parse_from(["degidx", "simulate", "--scenario", "E", "-n", "5", "-o", "x"]).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_USAGE);
    }

    #[test]
    fn merge_overrides_nested_fields() {
        let mut base = serde_json::json!({"a": 1, "b": {"c": 2, "d": [1, 2]}});
        merge_json(&mut base, serde_json::json!({"b": {"d": [3]}, "e": true}));
        assert_eq!(base, serde_json::json!({"a": 1, "b": {"c": 2, "d": [3]}, "e": true}));
    }

    #[test]
    fn config_file_overrides_flags() {
        let run = FitRun {
            data: DataSource::LongCsv {
                path: "d.csv".into(),
                subset: None,
            },
            split: None,
            method: Method::DiVs,
            fit: FitConfig::default(),
            strict: false,
            out_dir: "out".into(),
        };
        let mut f = tempfile::NamedTempFile::new().unwrap();
        std::io::Write::write_all(&mut f, br#"{"fit": {"folds": 3, "optimizer": {"restarts": 1}}, "strict": true}"#).unwrap();
        let r = resolve(run.clone(), Some(f.path())).unwrap();
        assert_eq!(r.fit.folds, 3);
        assert_eq!(r.fit.optimizer.restarts, 1);
        assert!(r.strict);
        assert_eq!(r.fit.lambda_grid, run.fit.lambda_grid);
        let mut bad = tempfile::NamedTempFile::new().unwrap();
        std::io::Write::write_all(&mut bad, br#"{"fit": {"folds": "x"}}"#).unwrap();
        assert_eq!(resolve(run, Some(bad.path())).unwrap_err().exit_code(), EXIT_USAGE);
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            CliError::Usage(String::new()).exit_code(),
            CliError::Data(DataError::Empty).exit_code(),
            CliError::Convergence(String::new()).exit_code(),
        ];
        assert_eq!(codes, [EXIT_USAGE, EXIT_DATA, EXIT_CONVERGENCE]);
    }
}
