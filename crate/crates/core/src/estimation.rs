//! Penalized fitting of the degradation index.
//!
//! The scale `σ` is optimized jointly with the coefficients through
//! `log(σ - σ_l)`, so it starts large and anneals toward its lower bound as
//! the fit sharpens. Fitting runs in two stages: a group LASSO (unit weights)
//! provides initial estimates, whose group norms set the adaptive weights of
//! the second stage. Each stage tunes `λ` by stratified k-fold
//! cross-validation and warm-starts its final fit from the fold-average
//! coefficients at the selected `λ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{classify_exposures, practical_threshold};
use crate::exposure::{
    trajectory_from_rates, transform_h, DataError, Dataset, DesignCache, EffectBasis, EffectKind, GroupedBeta,
    Trajectory, UnitSpan,
};
use crate::likelihood::{adaptive_weights, anchor_term, unit_loglik_unchecked};
use crate::optim::{minimize, NelderMeadOptions, Objective};

/// TER ceiling under which the FNR-minimizing `λ` is accepted.
pub const TER_CEILING: f64 = 0.2;

#[derive(Debug, Error)]
pub enum FitError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("infeasible start: objective is {0}")]
    InfeasibleStart(f64),
    #[error("stratification failed: fold {fold} has no failed units")]
    StratificationFailed { fold: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Evaluation budget per free parameter for final fits.
    pub evals_per_dim: usize,
    /// Evaluation budget per free parameter for cross-validation fits.
    pub cv_evals_per_dim: usize,
    pub xtol: f64,
    pub ftol: f64,
    pub restarts: usize,
    /// Initial simplex step for coefficients: `max(step_floor, step_frac · |β|)`.
    pub step_floor: f64,
    pub step_frac: f64,
    /// Initial simplex step for `log(σ - σ_l)`.
    pub sigma_step: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            evals_per_dim: 2000,
            cv_evals_per_dim: 2000,
            xtol: 1e-8,
            ftol: 1e-10,
            restarts: 3,
            step_floor: 0.5,
            step_frac: 0.2,
            sigma_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColdStartConfig {
    /// Coefficients are drawn uniformly from `[-range, range]`.
    pub range: f64,
    pub max_attempts: usize,
}

impl Default for ColdStartConfig {
    fn default() -> Self {
        Self {
            range: 1.0,
            max_attempts: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub alpha: f64,
    pub sigma_lower: f64,
    /// Starting scale of every fit.
    pub sigma_start: f64,
    pub eta: f64,
    pub gamma: f64,
    /// Candidate `λ` values, ascending.
    pub lambda_grid: Vec<f64>,
    /// Multiply the grid by the number of training units.
    pub lambda_scale_by_n: bool,
    pub folds: usize,
    pub n_interior_knots: usize,
    pub effect: EffectKind,
    /// Run the adaptive (second) stage.
    pub adaptive: bool,
    pub selection_tol: f64,
    /// Quantile `p` of the practical threshold used in cross-validation.
    pub classification_quantile: f64,
    pub cold_start: ColdStartConfig,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            alpha: 5f64.exp(),
            sigma_lower: 0.01,
            sigma_start: 1.0,
            eta: 5.0,
            gamma: 2.0,
            lambda_grid: log_spaced(1e-3, 1e2, 10),
            lambda_scale_by_n: true,
            folds: 5,
            n_interior_knots: 2,
            effect: EffectKind::Spline,
            adaptive: true,
            selection_tol: 1e-4,
            classification_quantile: 0.01,
            cold_start: ColdStartConfig::default(),
            optimizer: OptimizerConfig::default(),
            seed: 0,
        }
    }
}

impl FitConfig {
    /// Unpenalized fit (a single `λ = 0`, no adaptive stage).
    pub fn without_selection(mut self) -> Self {
        self.lambda_grid = vec![0.0];
        self.adaptive = false;
        self
    }

    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |m: &str| Err(FitError::Config(m.into()));
        if !(self.sigma_lower > 0.0) {
            return bad("sigma_lower must be positive");
        }
        if !(self.sigma_start > self.sigma_lower) {
            return bad("sigma_start must exceed sigma_lower");
        }
        if self.folds < 2 {
            return bad("at least two folds are required");
        }
        if self.lambda_grid.is_empty() {
            return bad("lambda grid is empty");
        }
        if self.lambda_grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return bad("lambda values must be finite and non-negative");
        }
        if !(self.alpha > 0.0) || !(self.eta >= 0.0) || !(self.gamma >= 0.0) {
            return bad("alpha must be positive and eta, gamma non-negative");
        }
        Ok(())
    }

    /// The `λ` values actually used for `n` training units.
    pub fn lambdas_for(&self, n: usize) -> Vec<f64> {
        let scale = if self.lambda_scale_by_n { n as f64 } else { 1.0 };
        let mut l: Vec<f64> = self.lambda_grid.iter().map(|v| v * scale).collect();
        l.sort_by(f64::total_cmp);
        l
    }
}

pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..count)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
        .collect()
}

/// `log(σ - σ_l)`.
pub fn reparam_sigma(sigma: f64, sigma_lower: f64) -> f64 {
    (sigma - sigma_lower).ln()
}

/// `exp(s) + σ_l`.
pub fn inverse_reparam(log_sigma_star: f64, sigma_lower: f64) -> f64 {
    log_sigma_star.exp() + sigma_lower
}

/// Objective settings shared by every fit of a stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Penalty {
    pub lambda: f64,
    pub weights: Vec<f64>,
    pub eta: f64,
    pub alpha: f64,
    pub sigma_lower: f64,
}

/// The penalized objective over `(free β, log σ*)` on a cached design.
pub struct ModelObjective<'a> {
    design: &'a DesignCache,
    penalty: &'a Penalty,
    sizes: Vec<usize>,
    /// `(group, offset in x, weight)` of every free group.
    free_groups: Vec<(usize, usize, f64)>,
    free_dim: usize,
    log_alpha: f64,
}

impl<'a> ModelObjective<'a> {
    pub fn new(design: &'a DesignCache, sizes: &[usize], penalty: &'a Penalty) -> Self {
        let mut free_groups = Vec::new();
        let mut off = 0;
        for (j, &w) in penalty.weights.iter().enumerate() {
            if w.is_finite() {
                free_groups.push((j, off, w));
                off += sizes[j];
            }
        }
        Self {
            design,
            penalty,
            sizes: sizes.to_vec(),
            free_groups,
            free_dim: off,
            log_alpha: penalty.alpha.ln(),
        }
    }

    /// Number of optimized parameters (free coefficients plus the scale).
    pub fn dim(&self) -> usize {
        self.free_dim + 1
    }

    pub fn pack(&self, beta: &GroupedBeta, sigma: f64) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim());
        for &(j, _, _) in &self.free_groups {
            x.extend_from_slice(beta.group(j));
        }
        x.push(reparam_sigma(sigma, self.penalty.sigma_lower));
        x
    }

    pub fn unpack(&self, x: &[f64]) -> (GroupedBeta, f64) {
        let mut beta = GroupedBeta::zeros(&self.sizes);
        for &(j, off, _) in &self.free_groups {
            let s = self.sizes[j];
            beta.group_mut(j).copy_from_slice(&x[off..off + s]);
        }
        (beta, inverse_reparam(x[self.free_dim], self.penalty.sigma_lower))
    }

    fn group_term(&self, x: &[f64]) -> f64 {
        if self.penalty.lambda == 0.0 {
            return 0.0;
        }
        let mut total = 0.0;
        for &(j, off, w) in &self.free_groups {
            let norm = x[off..off + self.sizes[j]].iter().map(|v| v * v).sum::<f64>().sqrt();
            total += w * norm;
        }
        self.penalty.lambda * total
    }

    fn data_term(&self, z: &[f64], sigma: f64) -> f64 {
        let d = self.design;
        let p = self.penalty;
        let mut neg_ll = 0.0;
        let mut anchor = 0.0;
        for span in &d.units {
            let UnitSpan { start, end, failed } = *span;
            let mut u = 0.0;
            for r in start..end {
                let w = d.weights[r];
                if w > 0.0 {
                    u += w * transform_h(z[r]);
                }
            }
            let rate = if failed { transform_h(z[end - 1]) } else { 1.0 };
            neg_ll -= unit_loglik_unchecked(failed, u, rate, self.log_alpha, sigma);
            anchor += anchor_term(failed, u, p.alpha);
        }
        neg_ll + p.eta * anchor
    }

    /// Exact objective value at `(β, σ)`.
    pub fn evaluate(&self, beta: &GroupedBeta, sigma: f64) -> f64 {
        let x = self.pack(beta, sigma);
        let mut z = vec![0.0; self.design.row_count()];
        self.image(&x, &mut z);
        self.value(&x, &z)
    }
}

impl Objective for ModelObjective<'_> {
    fn image_len(&self) -> usize {
        self.design.row_count()
    }

    fn image(&self, x: &[f64], out: &mut [f64]) {
        let (beta, _) = self.unpack(x);
        self.design.linear_predictors(beta.as_slice(), out);
    }

    fn value(&self, x: &[f64], img: &[f64]) -> f64 {
        let sigma = inverse_reparam(x[self.free_dim], self.penalty.sigma_lower);
        let v = self.data_term(img, sigma) + self.group_term(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }

    fn marker(&self, x: &[f64]) -> f64 {
        inverse_reparam(x[self.free_dim], self.penalty.sigma_lower)
    }

    /// Tries zeroing each penalized group and keeps every change that does not
    /// raise the objective; the simplex alone only approaches the kink at zero.
    fn polish(&self, x: &[f64], f: f64) -> Option<(Vec<f64>, f64)> {
        if self.penalty.lambda == 0.0 {
            return None;
        }
        let mut best = x.to_vec();
        let mut best_f = f;
        let mut z = vec![0.0; self.image_len()];
        let mut changed = false;
        for &(j, off, w) in &self.free_groups {
            let s = self.sizes[j];
            if w == 0.0 || best[off..off + s].iter().all(|v| *v == 0.0) {
                continue;
            }
            let mut trial = best.clone();
            trial[off..off + s].iter_mut().for_each(|v| *v = 0.0);
            self.image(&trial, &mut z);
            let ft = self.value(&trial, &z);
            if ft <= best_f {
                best = trial;
                best_f = ft;
                changed = true;
            }
        }
        changed.then_some((best, best_f))
    }
}

/// Outcome of one penalized minimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOutcome {
    pub beta: GroupedBeta,
    pub sigma: f64,
    pub objective: f64,
    pub start_objective: f64,
    pub evals: usize,
    pub restarts: usize,
    pub converged: bool,
    /// Best-so-far objective each time it improved.
    pub objective_trace: Vec<f64>,
    /// `σ` at the incumbent each time the objective improved.
    pub sigma_trace: Vec<f64>,
}

/// Joint Nelder-Mead over the free coefficients and `log(σ - σ_l)`.
///
/// Groups with infinite weight stay pinned at zero.
pub fn optimize(
    design: &DesignCache,
    sizes: &[usize],
    penalty: &Penalty,
    start: &GroupedBeta,
    sigma_start: f64,
    cfg: &OptimizerConfig,
    evals_per_dim: usize,
) -> Result<OptimizeOutcome, FitError> {
    let obj = ModelObjective::new(design, sizes, penalty);
    let mut start = start.clone();
    for (j, w) in penalty.weights.iter().enumerate() {
        if w.is_infinite() {
            start.group_mut(j).iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let start_objective = obj.evaluate(&start, sigma_start);
    if !start_objective.is_finite() {
        return Err(FitError::InfeasibleStart(start_objective));
    }
    let m = nelder_mead(&obj, &start, sigma_start, cfg, evals_per_dim, cfg.restarts);
    let (mut beta, mut sigma) = obj.unpack(&m.x);
    let mut objective = obj.evaluate(&beta, sigma);
    if !(objective <= start_objective) {
        // Carried images drifted past the start; keep the exact incumbent.
        beta = start;
        sigma = sigma_start;
        objective = start_objective;
    }
    Ok(OptimizeOutcome {
        beta,
        sigma,
        objective,
        start_objective,
        evals: m.evals,
        restarts: m.restarts_used,
        converged: m.converged,
        objective_trace: m.trace.iter().map(|t| t.value).collect(),
        sigma_trace: m.trace.iter().map(|t| t.marker).collect(),
    })
}

fn nelder_mead(
    obj: &ModelObjective<'_>,
    start: &GroupedBeta,
    sigma_start: f64,
    cfg: &OptimizerConfig,
    evals_per_dim: usize,
    restarts: usize,
) -> crate::optim::Minimum {
    let x0 = obj.pack(start, sigma_start);
    let mut steps: Vec<f64> = x0
        .iter()
        .map(|v| (cfg.step_frac * v.abs()).max(cfg.step_floor))
        .collect();
    *steps.last_mut().unwrap() = cfg.sigma_step;
    let opts = NelderMeadOptions {
        max_evals: evals_per_dim * obj.dim(),
        ftol: cfg.ftol,
        xtol: cfg.xtol,
        restarts,
        ..Default::default()
    };
    minimize(obj, &x0, &steps, &opts)
}

/// `min log u` over failed units minus `max log u` over censored units;
/// `+∞` when either set is empty.
pub fn separation(exposures: &[(f64, f64)], failed: impl Iterator<Item = bool>) -> f64 {
    let mut min_failed = f64::INFINITY;
    let mut max_censored = f64::NEG_INFINITY;
    for (&(u, _), f) in exposures.iter().zip(failed) {
        let lu = u.ln();
        if f {
            min_failed = min_failed.min(lu);
        } else {
            max_censored = max_censored.max(lu);
        }
    }
    if min_failed.is_infinite() || max_censored.is_infinite() {
        f64::INFINITY
    } else {
        min_failed - max_censored
    }
}

/// Random starting coefficients whose index separates failed from censored
/// units at their event times.
pub fn cold_start(
    design: &DesignCache,
    sizes: &[usize],
    cfg: &ColdStartConfig,
    rng: &mut impl Rng,
) -> GroupedBeta {
    let mut best: Option<(f64, GroupedBeta)> = None;
    for attempt in 0..cfg.max_attempts.max(1) {
        let mut beta = GroupedBeta::zeros(sizes);
        beta.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-cfg.range..=cfg.range));
        let exposures = design.exposures(beta.as_slice());
        let sep = separation(&exposures, design.units.iter().map(|s| s.failed));
        if sep > 0.0 {
            log::debug!("cold start accepted after {} draws", attempt + 1);
            return beta;
        }
        if best.as_ref().is_none_or(|(s, _)| sep > *s) {
            best = Some((sep, beta));
        }
    }
    let (sep, beta) = best.unwrap();
    log::warn!(
        "cold start: no separating draw in {} attempts; using best separation {sep:.4}",
        cfg.max_attempts
    );
    beta
}

/// Stratified fold labels: failed and censored units are shuffled separately
/// and dealt round-robin.
pub fn stratified_folds(failed: &[bool], k: usize, rng: &mut impl Rng) -> Result<Vec<usize>, FitError> {
    use rand::seq::SliceRandom;
    let mut labels = vec![0; failed.len()];
    let mut offset = 0;
    for status in [true, false] {
        let mut idx: Vec<usize> = (0..failed.len()).filter(|&i| failed[i] == status).collect();
        idx.shuffle(rng);
        for (pos, &i) in idx.iter().enumerate() {
            labels[i] = (pos + offset) % k;
        }
        offset += idx.len();
    }
    for fold in 0..k {
        if !(0..failed.len()).any(|i| labels[i] == fold && failed[i]) {
            return Err(FitError::StratificationFailed { fold });
        }
    }
    Ok(labels)
}

/// Tuning rule: take the `λ` minimizing FNR when its TER is at most
/// [`TER_CEILING`], otherwise the `λ` minimizing TER. Ties go to the larger `λ`.
pub fn select_lambda(lambdas: &[f64], fnr: &[f64], ter: &[f64]) -> usize {
    let argmin = |v: &[f64]| {
        let key = |i: usize| if v[i].is_nan() { f64::INFINITY } else { v[i] };
        (0..v.len())
            .reduce(|best, i| {
                let (a, b) = (key(i), key(best));
                if a < b || (a == b && lambdas[i] > lambdas[best]) {
                    i
                } else {
                    best
                }
            })
            .expect("non-empty grid")
    };
    let kf = argmin(fnr);
    if ter[kf] <= TER_CEILING {
        kf
    } else {
        argmin(ter)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub lambda: f64,
    pub fnr: f64,
    pub fpr: f64,
    pub ter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub selected: usize,
    pub lambda: f64,
    pub warm_start: GroupedBeta,
    pub table: Vec<CvRow>,
}

struct FoldDesign {
    train: DesignCache,
    test: DesignCache,
}

/// Cross-validates `λ` for fixed group weights.
pub fn cv_tune(
    design: &DesignCache,
    sizes: &[usize],
    weights: &[f64],
    lambdas: &[f64],
    start: &GroupedBeta,
    cfg: &FitConfig,
    rng: &mut impl Rng,
) -> Result<CvOutcome, FitError> {
    let failed: Vec<bool> = design.units.iter().map(|s| s.failed).collect();
    let labels = stratified_folds(&failed, cfg.folds, rng)?;
    let folds: Vec<FoldDesign> = (0..cfg.folds)
        .map(|f| {
            let train: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != f).collect();
            let test: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == f).collect();
            FoldDesign {
                train: design.subset(&train),
                test: design.subset(&test),
            }
        })
        .collect();

    let tasks: Vec<(usize, usize)> = (0..lambdas.len())
        .flat_map(|b| (0..cfg.folds).map(move |f| (b, f)))
        .collect();
    let results: Vec<Result<(GroupedBeta, f64, f64), FitError>> = tasks
        .par_iter()
        .map(|&(b, f)| {
            let penalty = Penalty {
                lambda: lambdas[b],
                weights: weights.to_vec(),
                eta: cfg.eta,
                alpha: cfg.alpha,
                sigma_lower: cfg.sigma_lower,
            };
            let fold = &folds[f];
            let out = optimize(
                &fold.train,
                sizes,
                &penalty,
                start,
                cfg.sigma_start,
                &cfg.optimizer,
                cfg.optimizer.cv_evals_per_dim,
            )?;
            let threshold = practical_threshold(cfg.alpha, out.sigma, cfg.classification_quantile);
            let exposures: Vec<f64> = fold.test.exposures(out.beta.as_slice()).iter().map(|e| e.0).collect();
            let truth: Vec<bool> = fold.test.units.iter().map(|s| s.failed).collect();
            let report = classify_exposures(&exposures, &truth, threshold);
            Ok((out.beta, report.fnr, report.fpr))
        })
        .collect();
    let results: Vec<(GroupedBeta, f64, f64)> = results.into_iter().collect::<Result<_, _>>()?;

    let mut table = Vec::with_capacity(lambdas.len());
    for (b, &lambda) in lambdas.iter().enumerate() {
        let rows = &results[b * cfg.folds..(b + 1) * cfg.folds];
        let fnr = nan_mean(rows.iter().map(|r| r.1));
        let fpr = nan_mean(rows.iter().map(|r| r.2));
        table.push(CvRow {
            lambda,
            fnr,
            fpr,
            ter: fnr + fpr,
        });
    }
    let fnr: Vec<f64> = table.iter().map(|r| r.fnr).collect();
    let ter: Vec<f64> = table.iter().map(|r| r.ter).collect();
    let selected = select_lambda(lambdas, &fnr, &ter);

    let rows = &results[selected * cfg.folds..(selected + 1) * cfg.folds];
    let mut warm = GroupedBeta::zeros(sizes);
    for r in rows {
        for (w, v) in warm.as_mut_slice().iter_mut().zip(r.0.as_slice()) {
            *w += v / rows.len() as f64;
        }
    }
    Ok(CvOutcome {
        selected,
        lambda: lambdas[selected],
        warm_start: warm,
        table,
    })
}

/// Mean over the non-NaN values (0 when all are NaN).
fn nan_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.filter(|v| !v.is_nan()).fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Serializable model: everything needed to score new units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub sensor_names: Vec<String>,
    pub basis: EffectBasis,
    pub beta: GroupedBeta,
    pub sigma: f64,
    pub alpha: f64,
    pub sigma_lower: f64,
    pub lambda: f64,
    pub selected_sensors: Vec<usize>,
}

impl FittedModel {
    /// Index trajectories of every unit in `data`.
    pub fn trajectories(&self, data: &Dataset) -> Vec<Trajectory> {
        let design = DesignCache::build(data, &self.basis);
        let mut z = vec![0.0; design.row_count()];
        design.linear_predictors(self.beta.as_slice(), &mut z);
        data.units
            .iter()
            .zip(&design.units)
            .map(|(unit, span)| {
                let rates: Vec<f64> = z[span.start..span.end].iter().map(|&v| transform_h(v)).collect();
                trajectory_from_rates(unit.unit_id, &unit.cycles, &rates)
            })
            .collect()
    }

    /// Index at each unit's last observed cycle.
    pub fn final_exposures(&self, data: &Dataset) -> Vec<f64> {
        self.trajectories(data).iter().map(Trajectory::at_event).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub lambda: f64,
    pub weights: Vec<f64>,
    pub cv_table: Vec<CvRow>,
    pub final_fit: OptimizeOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FittedModel,
    pub lambda_selected: f64,
    /// Cross-validation table of the last stage (empty for a single-`λ` grid).
    pub cv_table: Vec<CvRow>,
    pub stages: Vec<StageSummary>,
    pub trajectories: Vec<Trajectory>,
}

impl FitResult {
    pub fn beta_hat(&self) -> &GroupedBeta {
        &self.model.beta
    }

    pub fn sigma_hat(&self) -> f64 {
        self.model.sigma
    }

    pub fn selected_sensors(&self) -> &[usize] {
        &self.model.selected_sensors
    }

    pub fn converged(&self) -> bool {
        self.stages.iter().all(|s| s.final_fit.converged)
    }
}

/// Runs one stage: tune `λ` (unless the grid is a single value) and refit on
/// all units from the fold-average warm start.
fn run_stage(
    design: &DesignCache,
    sizes: &[usize],
    weights: Vec<f64>,
    lambdas: &[f64],
    start: &GroupedBeta,
    cfg: &FitConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StageSummary, FitError> {
    let (lambda, warm, cv_table) = if lambdas.len() == 1 {
        (lambdas[0], start.clone(), Vec::new())
    } else {
        let cv = cv_tune(design, sizes, &weights, lambdas, start, cfg, rng)?;
        (cv.lambda, cv.warm_start, cv.table)
    };
    let penalty = Penalty {
        lambda,
        weights: weights.clone(),
        eta: cfg.eta,
        alpha: cfg.alpha,
        sigma_lower: cfg.sigma_lower,
    };
    let final_fit = optimize(
        design,
        sizes,
        &penalty,
        &warm,
        cfg.sigma_start,
        &cfg.optimizer,
        cfg.optimizer.evals_per_dim,
    )?;
    if !final_fit.converged {
        log::warn!("final fit at lambda {lambda} stopped on its evaluation budget");
    }
    Ok(StageSummary {
        lambda,
        weights,
        cv_table,
        final_fit,
    })
}

fn zero_small_groups(beta: &mut GroupedBeta, tol: f64) {
    for j in 0..beta.group_count() {
        if beta.group_norm(j) <= tol {
            beta.group_mut(j).iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Two-stage fit: group LASSO, then adaptive group LASSO.
pub fn fit(data: &Dataset, cfg: &FitConfig) -> Result<FitResult, FitError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(DataError::Empty.into());
    }
    data.validate()?;
    let basis = EffectBasis::build(data, cfg.effect, cfg.n_interior_knots)?;
    let design = DesignCache::build(data, &basis);
    let sizes = basis.group_sizes();
    let p = sizes.len();
    let lambdas = cfg.lambdas_for(data.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let start = cold_start(&design, &sizes, &cfg.cold_start, &mut rng);
    let stage1 = run_stage(&design, &sizes, vec![1.0; p], &lambdas, &start, cfg, &mut rng)?;
    let mut stages = vec![stage1];

    let penalized = lambdas.iter().any(|&l| l > 0.0);
    if cfg.adaptive && penalized {
        let mut tilde = stages[0].final_fit.beta.clone();
        zero_small_groups(&mut tilde, cfg.selection_tol);
        let weights = adaptive_weights(&tilde, cfg.gamma);
        let stage2 = run_stage(&design, &sizes, weights, &lambdas, &tilde, cfg, &mut rng)?;
        stages.push(stage2);
    }

    let last = stages.last().unwrap();
    let mut beta = last.final_fit.beta.clone();
    zero_small_groups(&mut beta, cfg.selection_tol);
    let selected_sensors: Vec<usize> = (0..p).filter(|&j| beta.group_norm(j) > 0.0).collect();
    let model = FittedModel {
        sensor_names: data.sensor_names.clone(),
        basis,
        beta,
        sigma: last.final_fit.sigma,
        alpha: cfg.alpha,
        sigma_lower: cfg.sigma_lower,
        lambda: last.lambda,
        selected_sensors,
    };
    let trajectories = model.trajectories(data);
    Ok(FitResult {
        lambda_selected: last.lambda,
        cv_table: last.cv_table.clone(),
        model,
        stages,
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_reparam_round_trip() {
        assert_eq!(reparam_sigma(1.01, 0.01), 0.0);
        assert!(inverse_reparam(-20.0, 0.01) > 0.01);
        assert!(inverse_reparam(-800.0, 0.01) >= 0.01);
        let back = inverse_reparam(reparam_sigma(0.7, 0.01), 0.01);
        assert!((back - 0.7).abs() < 1e-14);
    }

    #[test]
    fn lambda_rule_examples() {
        let l = [0.1, 1.0, 10.0];
        assert_eq!(select_lambda(&l, &[0.10, 0.05, 0.08], &[0.30, 0.15, 0.25]), 1);
        assert_eq!(select_lambda(&l, &[0.10, 0.05, 0.08], &[0.30, 0.25, 0.22]), 2);
        assert_eq!(select_lambda(&[3.0], &[0.9], &[1.8]), 0);
    }

    #[test]
    fn lambda_ties_prefer_larger_lambda() {
        let l = [0.1, 1.0, 10.0];
        assert_eq!(select_lambda(&l, &[0.05, 0.05, 0.2], &[0.1, 0.1, 0.3]), 1);
        assert_eq!(select_lambda(&l, &[0.5, 0.5, 0.5], &[0.6, 0.6, 0.7]), 1);
    }

    #[test]
    fn folds_keep_failures_in_every_fold() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let failed: Vec<bool> = (0..23).map(|i| i % 3 != 0).collect();
        let labels = stratified_folds(&failed, 5, &mut rng).unwrap();
        for f in 0..5 {
            let n_failed = (0..23).filter(|&i| labels[i] == f && failed[i]).count();
            assert!((3..=4).contains(&n_failed));
        }
    }

    #[test]
    fn too_few_failures_fail_stratification() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let failed = [true, true, false, false, false, false];
        assert!(matches!(
            stratified_folds(&failed, 3, &mut rng),
            Err(FitError::StratificationFailed { fold: 2 })
        ));
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_spaced(1e-3, 1e2, 10);
        assert_eq!(g.len(), 10);
        assert!((g[0] - 1e-3).abs() < 1e-15);
        assert!((g[9] - 1e2).abs() < 1e-10);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = FitConfig::default();
        c.folds = 1;
        assert!(c.validate().is_err());
        let mut c = FitConfig::default();
        c.lambda_grid.clear();
        assert!(c.validate().is_err());
        let mut c = FitConfig::default();
        c.sigma_lower = 0.0;
        assert!(c.validate().is_err());
    }
}
