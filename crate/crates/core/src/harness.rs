//! Repeated randomized trials: transfer comparisons, concentration-factor
//! sweeps and active-learning curves.
//!
//! Trial `i` uses seed `master_seed + i` for every random choice it makes,
//! so any subset of trials can be re-run in isolation and trials can run on
//! a worker pool in any order.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active::{
    run_active, ActiveState, EnsembleContext, LearningCurve, QueryRecord, StrategyKind,
};
use crate::data::{
    generate_synthetic, load_dense_csv, split_labeled_fraction, DomainDataset, FeatureVector,
    LabeledExample, SyntheticConfig,
};
use crate::ensemble::{
    accuracy, auto_beta2, combine_weights, compute_proximity, peer_vote, predict_weighted_vote,
    ProximityVector, RelationMatrix,
};
use crate::error::{Error, Result};
use crate::kernel::{
    compute_mmd, median_bandwidth, solve_kmm, KernelConfig, KmmConfig, KmmSolution,
};
use crate::pipeline::{relations_for, train_source_model, EnsembleParams};
use crate::rng::{self, streams};
use crate::stats::{mean, paired_significance, std_dev};
use crate::svm::{LinearModel, TrainConfig};

/// Points used for the median-heuristic bandwidth are capped at this many,
/// taken at an even stride over the pooled training data.
const BANDWIDTH_SAMPLE_CAP: usize = 2000;

/// Fraction of an ingested target domain held out as test data.
const TARGET_TEST_FRACTION: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic(SyntheticConfig),
    Csv(CsvDatasetSpec),
}

/// Pre-reduced dense CSV domains.
///
/// Sources must be fully labeled. Without `target_test`, the target file is
/// split 40% test / 60% unlabeled pool; with it, every target row goes to
/// the pool and labels in the target file are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvDatasetSpec {
    pub sources: Vec<PathBuf>,
    pub target: PathBuf,
    #[serde(default)]
    pub target_test: Option<PathBuf>,
    #[serde(default)]
    pub header: bool,
}

/// Which sources get which labeled fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FractionPlan {
    /// Same fraction everywhere.
    Uniform(f64),
    /// Each source draws its fraction independently from the set.
    DrawFrom(Vec<f64>),
    /// Draw one fraction per source from `values`, then assign them by
    /// proximity rank.
    Ordered {
        values: Vec<f64>,
        order: ProximityOrder,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProximityOrder {
    /// Closer sources get more labels.
    #[serde(alias = "case1")]
    SimilarRicher,
    /// Closer sources get fewer labels.
    #[serde(alias = "case2")]
    SimilarPoorer,
}

impl FractionPlan {
    fn values(&self) -> &[f64] {
        match self {
            FractionPlan::Uniform(f) => std::slice::from_ref(f),
            FractionPlan::DrawFrom(v) | FractionPlan::Ordered { values: v, .. } => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TransferMethod {
    /// Best single KMM-weighted source, chosen with hindsight on test data.
    #[serde(rename = "KMM_best")]
    KmmBest,
    /// One KMM-weighted model on all sources pooled.
    #[serde(rename = "KMM_A")]
    KmmAggregate,
    /// Weighted vote with combined weights.
    #[serde(rename = "PW_MSTL_b")]
    PwMstlB,
    /// Weighted vote with peer substitution for unsure sources.
    #[serde(rename = "PW_MSTL")]
    PwMstl,
}

impl TransferMethod {
    pub const ALL: [TransferMethod; 4] = [
        TransferMethod::KmmBest,
        TransferMethod::KmmAggregate,
        TransferMethod::PwMstlB,
        TransferMethod::PwMstl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransferMethod::KmmBest => "KMM_best",
            TransferMethod::KmmAggregate => "KMM_A",
            TransferMethod::PwMstlB => "PW_MSTL_b",
            TransferMethod::PwMstl => "PW_MSTL",
        }
    }
}

impl fmt::Display for TransferMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_methods() -> Vec<TransferMethod> {
    TransferMethod::ALL.to_vec()
}
fn default_strategies() -> Vec<StrategyKind> {
    StrategyKind::ALL.to_vec()
}
fn default_trials() -> usize {
    30
}
fn default_mu() -> f64 {
    0.2
}
fn default_one() -> f64 {
    1.0
}
fn default_beta1() -> f64 {
    5.0
}
fn default_budget_fraction() -> f64 {
    0.1
}
fn default_mu_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}
fn default_evaluator() -> TransferMethod {
    TransferMethod::PwMstl
}

/// One experiment definition; mirrors the JSON config file field for field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub labeled_fractions: FractionPlan,
    #[serde(default = "default_methods")]
    pub methods: Vec<TransferMethod>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<StrategyKind>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_one")]
    pub b1: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    /// `None` picks `1 / median(MMD^rho)` per trial.
    #[serde(default)]
    pub beta2: Option<f64>,
    #[serde(default = "default_one")]
    pub rho: f64,
    #[serde(default = "default_one")]
    pub svm_c: f64,
    #[serde(default = "default_budget_fraction")]
    pub budget_fraction: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_mu_grid")]
    pub mu_grid: Vec<f64>,
    #[serde(default)]
    pub kmm: KmmConfig,
    /// Transfer method scoring the active-learning curves.
    #[serde(default = "default_evaluator")]
    pub evaluator: TransferMethod,
}

impl ExperimentConfig {
    /// Synthetic experiment with every knob at its default.
    pub fn synthetic(synthetic: SyntheticConfig, labeled_fractions: FractionPlan) -> Self {
        Self {
            dataset: DatasetSpec::Synthetic(synthetic),
            labeled_fractions,
            methods: default_methods(),
            strategies: default_strategies(),
            trials: default_trials(),
            mu: default_mu(),
            b1: 1.0,
            beta1: default_beta1(),
            beta2: None,
            rho: 1.0,
            svm_c: 1.0,
            budget_fraction: default_budget_fraction(),
            master_seed: 0,
            mu_grid: default_mu_grid(),
            kmm: KmmConfig::default(),
            evaluator: default_evaluator(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if !unit(self.budget_fraction) {
            return bad(format!(
                "budget_fraction {} outside [0, 1]",
                self.budget_fraction
            ));
        }
        let fractions = self.labeled_fractions.values();
        if fractions.is_empty() {
            return bad("labeled_fractions must not be empty".into());
        }
        if let Some(f) = fractions.iter().find(|f| !unit(**f)) {
            return bad(format!("labeled fraction {f} outside [0, 1]"));
        }
        if !unit(self.mu) {
            return bad(format!("mu {} outside [0, 1]", self.mu));
        }
        if let Some(m) = self.mu_grid.iter().find(|m| !unit(**m)) {
            return bad(format!("mu_grid value {m} outside [0, 1]"));
        }
        if !(self.b1.is_finite() && self.b1 >= 0.0) {
            return bad("b1 must be non-negative".into());
        }
        if !(self.beta1.is_finite() && self.beta1 >= 0.0) {
            return bad("beta1 must be non-negative".into());
        }
        if let Some(b) = self.beta2 {
            if !(b.is_finite() && b >= 0.0) {
                return bad("beta2 must be non-negative".into());
            }
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return bad("rho must be positive".into());
        }
        if !(self.svm_c.is_finite() && self.svm_c > 0.0) {
            return bad("svm_c must be positive".into());
        }
        if !matches!(
            self.evaluator,
            TransferMethod::PwMstl | TransferMethod::PwMstlB
        ) {
            return bad(format!(
                "evaluator must be PW_MSTL or PW_MSTL_b, got {}",
                self.evaluator
            ));
        }
        self.kmm.validate()?;
        match &self.dataset {
            DatasetSpec::Synthetic(s) => s.validate()?,
            DatasetSpec::Csv(c) => {
                if c.sources.is_empty() {
                    return bad("csv dataset needs at least one source".into());
                }
            }
        }
        Ok(())
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.master_seed.wrapping_add(trial as u64)
    }

    fn params(&self) -> EnsembleParams {
        EnsembleParams {
            mu: self.mu,
            b1: self.b1,
            beta1: self.beta1,
            rho: self.rho,
        }
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            c: self.svm_c,
            seed: rng::sub_seed(seed, streams::SVM),
            ..TrainConfig::default()
        }
    }
}

/// Everything one trial needs before any model is trained.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub trial: usize,
    pub seed: u64,
    /// Split sources: labeled pool plus unlabeled pool with oracle labels.
    pub sources: Vec<DomainDataset>,
    pub fractions: Vec<f64>,
    pub target_pool: Vec<FeatureVector>,
    pub target_test: Vec<LabeledExample>,
    pub kernel: KernelConfig,
    pub mmd: Vec<f64>,
    pub proximity: ProximityVector,
    /// Matching weights per source, over labeled-then-unlabeled order.
    pub alphas: Vec<KmmSolution>,
}

struct RawDomains {
    sources: Vec<DomainDataset>,
    target_pool: Vec<FeatureVector>,
    target_test: Vec<LabeledExample>,
    /// Smaller is closer to the target; used to order fractions.
    closeness_rank_key: Option<Vec<f64>>,
}

fn load_raw(cfg: &ExperimentConfig, seed: u64) -> Result<RawDomains> {
    match &cfg.dataset {
        DatasetSpec::Synthetic(s) => {
            let generated = generate_synthetic(&SyntheticConfig { seed, ..s.clone() })?;
            Ok(RawDomains {
                sources: generated.sources,
                target_pool: generated.target.unlabeled,
                target_test: generated.target.labeled,
                closeness_rank_key: Some(s.proximity.clone()),
            })
        }
        DatasetSpec::Csv(c) => {
            let sources = c
                .sources
                .iter()
                .map(|p| load_dense_csv(p, c.header))
                .collect::<Result<Vec<_>>>()?;
            let target = load_dense_csv(&c.target, c.header)?;
            let (target_pool, target_test) = match &c.target_test {
                Some(test_path) => {
                    let test = load_dense_csv(test_path, c.header)?;
                    if !test.unlabeled.is_empty() {
                        return Err(Error::InvalidConfig(format!(
                            "target test file {} has unlabeled rows",
                            test_path.display()
                        )));
                    }
                    (target.aggregate_points(), test.labeled)
                }
                None => {
                    let split = split_labeled_fraction(
                        &target,
                        TARGET_TEST_FRACTION,
                        rng::sub_seed(seed, streams::TARGET_SPLIT),
                    )?;
                    (split.unlabeled, split.labeled)
                }
            };
            Ok(RawDomains {
                sources,
                target_pool,
                target_test,
                closeness_rank_key: None,
            })
        }
    }
}

fn assign_fractions(plan: &FractionPlan, k: usize, closeness: &[f64], seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, streams::FRACTIONS);
    match plan {
        FractionPlan::Uniform(f) => vec![*f; k],
        FractionPlan::DrawFrom(values) => (0..k)
            .map(|_| *values.choose(&mut rng).expect("non-empty"))
            .collect(),
        FractionPlan::Ordered { values, order } => {
            let mut drawn: Vec<f64> = (0..k)
                .map(|_| values[rng.gen_range(0..values.len())])
                .collect();
            drawn.sort_by(|a, b| b.total_cmp(a));
            if *order == ProximityOrder::SimilarPoorer {
                drawn.reverse();
            }
            // drawn is now in the order the closest, second closest, ... sources receive
            let mut by_closeness: Vec<usize> = (0..k).collect();
            by_closeness.sort_by(|&a, &b| closeness[a].total_cmp(&closeness[b]).then(a.cmp(&b)));
            let mut out = vec![0.0; k];
            for (rank, &source) in by_closeness.iter().enumerate() {
                out[source] = drawn[rank];
            }
            out
        }
    }
}

fn strided_sample(points: Vec<&FeatureVector>, cap: usize) -> Vec<FeatureVector> {
    if points.len() <= cap {
        return points.into_iter().cloned().collect();
    }
    let n = points.len();
    (0..cap).map(|i| points[i * n / cap].clone()).collect()
}

/// Loads or generates the trial's domains, splits sources, measures MMD and
/// solves the matching problem for every source.
pub fn prepare_trial(cfg: &ExperimentConfig, trial: usize) -> Result<TrialData> {
    let seed = cfg.trial_seed(trial);
    let raw = load_raw(cfg, seed)?;
    if raw.target_pool.is_empty() || raw.target_test.is_empty() {
        return Err(Error::EmptyInput(
            "target needs an unlabeled pool and test data",
        ));
    }
    let k = raw.sources.len();

    let pooled: Vec<&FeatureVector> = raw
        .sources
        .iter()
        .flat_map(|s| s.labeled.iter().map(|e| &e.x).chain(&s.unlabeled))
        .chain(&raw.target_pool)
        .collect();
    let kernel = median_bandwidth(&strided_sample(pooled, BANDWIDTH_SAMPLE_CAP))?;

    let mmd = raw
        .sources
        .iter()
        .map(|s| compute_mmd(&s.aggregate_points(), &raw.target_pool, &kernel).map(|m| m.value()))
        .collect::<Result<Vec<f64>>>()?;
    let beta2 = cfg.beta2.unwrap_or_else(|| auto_beta2(&mmd, cfg.rho));
    let proximity = compute_proximity(&mmd, beta2, cfg.rho)?;

    let closeness = raw
        .closeness_rank_key
        .clone()
        .unwrap_or_else(|| mmd.clone());
    let fractions = assign_fractions(&cfg.labeled_fractions, k, &closeness, seed);
    let sources = raw
        .sources
        .iter()
        .zip(&fractions)
        .enumerate()
        .map(|(i, (s, &f))| split_labeled_fraction(s, f, rng::sub_seed(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    if let Some(s) = sources.iter().find(|s| s.labeled.is_empty()) {
        return Err(Error::EmptyInput(if s.name.is_empty() {
            "a source has no labeled examples"
        } else {
            "every source needs at least one labeled example"
        }));
    }

    let alphas = sources
        .iter()
        .map(|s| solve_kmm(&s.aggregate_points(), &raw.target_pool, &kernel, &cfg.kmm))
        .collect::<Result<Vec<_>>>()?;

    Ok(TrialData {
        trial,
        seed,
        sources,
        fractions,
        target_pool: raw.target_pool,
        target_test: raw.target_test,
        kernel,
        mmd,
        proximity,
        alphas,
    })
}

/// Source models and relation matrix for a prepared trial.
#[derive(Debug, Clone)]
pub struct FittedTrial {
    pub models: Vec<LinearModel>,
    pub relations: RelationMatrix,
}

pub fn fit_trial(cfg: &ExperimentConfig, data: &TrialData) -> Result<FittedTrial> {
    let train = cfg.train_config(data.seed);
    let models = data
        .sources
        .iter()
        .zip(&data.alphas)
        .map(|(s, a)| train_source_model(&s.labeled, &a.alpha[..s.labeled.len()], &train))
        .collect::<Result<Vec<_>>>()?;
    let sets: Vec<&[LabeledExample]> = data.sources.iter().map(|s| s.labeled.as_slice()).collect();
    let relations = relations_for(&models, &sets, cfg.beta1)?;
    Ok(FittedTrial { models, relations })
}

/// Target-test accuracy of an ensemble method at concentration factor `mu`.
pub fn ensemble_accuracy(
    method: TransferMethod,
    data: &TrialData,
    fitted: &FittedTrial,
    mu: f64,
    b1: f64,
) -> Result<f64> {
    let weights = combine_weights(&data.proximity, &fitted.relations, mu)?;
    match method {
        TransferMethod::PwMstlB => accuracy(&data.target_test, |x| {
            predict_weighted_vote(&fitted.models, &weights.omega, x)
        }),
        TransferMethod::PwMstl => accuracy(&data.target_test, |x| {
            let margins: Vec<f64> = fitted.models.iter().map(|m| m.margin(x)).collect();
            Ok(peer_vote(&margins, &weights.omega, &fitted.relations, b1))
        }),
        other => Err(Error::InvalidConfig(format!(
            "{other} is not an ensemble method"
        ))),
    }
}

fn single_model_accuracy(model: &LinearModel, test: &[LabeledExample]) -> Result<f64> {
    accuracy(test, |x| model.predict(x).map(|l| (l, 0.0)))
}

fn kmm_aggregate_accuracy(cfg: &ExperimentConfig, data: &TrialData) -> Result<f64> {
    let mut points = Vec::new();
    let mut labeled_positions = Vec::new();
    let mut labeled = Vec::new();
    for s in &data.sources {
        for e in &s.labeled {
            labeled_positions.push(points.len());
            labeled.push(e.clone());
            points.push(e.x.clone());
        }
        points.extend(s.unlabeled.iter().cloned());
    }
    let solution = solve_kmm(&points, &data.target_pool, &data.kernel, &cfg.kmm)?;
    let weights: Vec<f64> = labeled_positions
        .iter()
        .map(|&i| solution.alpha[i])
        .collect();
    let model = train_source_model(&labeled, &weights, &cfg.train_config(data.seed))?;
    single_model_accuracy(&model, &data.target_test)
}

/// Per-method target accuracies for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub fractions: Vec<f64>,
    pub accuracies: BTreeMap<TransferMethod, f64>,
}

fn run_transfer_trial(cfg: &ExperimentConfig, trial: usize) -> Result<TrialResult> {
    let data = prepare_trial(cfg, trial)?;
    let fitted = fit_trial(cfg, &data)?;
    let mut accuracies = BTreeMap::new();
    for &method in &cfg.methods {
        let acc = match method {
            TransferMethod::KmmBest => fitted
                .models
                .iter()
                .map(|m| single_model_accuracy(m, &data.target_test))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(0.0, f64::max),
            TransferMethod::KmmAggregate => kmm_aggregate_accuracy(cfg, &data)?,
            ensemble => ensemble_accuracy(ensemble, &data, &fitted, cfg.mu, cfg.b1)?,
        };
        accuracies.insert(method, acc);
    }
    Ok(TrialResult {
        trial,
        seed: data.seed,
        fractions: data.fractions,
        accuracies,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseP {
    pub a: String,
    pub b: String,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SummaryStats {
    pub methods: Vec<MethodSummary>,
    pub p_values: Vec<PairwiseP>,
}

impl SummaryStats {
    pub fn mean_of(&self, method: &str) -> Option<f64> {
        self.methods
            .iter()
            .find(|m| m.method == method)
            .map(|m| m.mean)
    }

    pub fn p_value(&self, a: &str, b: &str) -> Option<f64> {
        self.p_values
            .iter()
            .find(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
            .map(|p| p.p_value)
    }
}

fn summarize(columns: &[(String, Vec<f64>)]) -> Result<SummaryStats> {
    let methods = columns
        .iter()
        .map(|(name, v)| MethodSummary {
            method: name.clone(),
            mean: mean(v),
            std: std_dev(v),
        })
        .collect();
    let mut p_values = Vec::new();
    for i in 0..columns.len() {
        for j in i + 1..columns.len() {
            let p = if columns[i].1.len() >= 2 {
                paired_significance(&columns[i].1, &columns[j].1)?
            } else {
                f64::NAN
            };
            p_values.push(PairwiseP {
                a: columns[i].0.clone(),
                b: columns[j].0.clone(),
                p_value: p,
            });
        }
    }
    Ok(SummaryStats { methods, p_values })
}

/// Trial that failed, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortedTrial {
    pub trial: usize,
    pub reason: String,
}

fn run_trials<T, F>(cfg: &ExperimentConfig, run: F) -> Result<(Vec<T>, Vec<AbortedTrial>)>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    cfg.validate()?;
    let outcomes: Vec<Result<T>> = (0..cfg.trials).into_par_iter().map(run).collect();
    let mut ok = Vec::with_capacity(cfg.trials);
    let mut aborted = Vec::new();
    for (trial, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(v) => ok.push(v),
            Err(e) => {
                log::warn!("trial {trial} aborted: {e}");
                aborted.push(AbortedTrial {
                    trial,
                    reason: e.to_string(),
                });
            }
        }
    }
    if aborted.len() * 10 > cfg.trials {
        return Err(Error::TooManyAborts {
            aborted: aborted.len(),
            total: cfg.trials,
        });
    }
    Ok((ok, aborted))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub trials: Vec<TrialResult>,
    pub summary: SummaryStats,
    pub aborted: Vec<AbortedTrial>,
}

impl TransferReport {
    /// Per-trial accuracies of one method, in trial order.
    pub fn column(&self, method: TransferMethod) -> Vec<f64> {
        self.trials
            .iter()
            .filter_map(|t| t.accuracies.get(&method).copied())
            .collect()
    }
}

pub fn run_transfer_experiment(cfg: &ExperimentConfig) -> Result<TransferReport> {
    if cfg.methods.is_empty() {
        return Err(Error::InvalidConfig("methods must not be empty".into()));
    }
    let (trials, aborted) = run_trials(cfg, |t| run_transfer_trial(cfg, t))?;
    let columns: Vec<(String, Vec<f64>)> = cfg
        .methods
        .iter()
        .map(|&m| {
            (
                m.name().to_string(),
                trials.iter().map(|t| t.accuracies[&m]).collect(),
            )
        })
        .collect();
    let summary = summarize(&columns)?;
    Ok(TransferReport {
        trials,
        summary,
        aborted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuPoint {
    pub mu: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuSweepReport {
    pub method: TransferMethod,
    pub points: Vec<MuPoint>,
    /// `per_trial[i][j]`: accuracy of trial `i` at `grid[j]`.
    pub per_trial: Vec<Vec<f64>>,
    pub aborted: Vec<AbortedTrial>,
}

/// Accuracy of the configured evaluator method at each `mu` in `grid`.
pub fn sweep_mu(cfg: &ExperimentConfig, grid: &[f64]) -> Result<MuSweepReport> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("mu grid must not be empty".into()));
    }
    if let Some(m) = grid.iter().find(|m| !(0.0..=1.0).contains(*m)) {
        return Err(Error::InvalidConfig(format!("mu {m} outside [0, 1]")));
    }
    let method = cfg.evaluator;
    let (per_trial, aborted) = run_trials(cfg, |t| {
        let data = prepare_trial(cfg, t)?;
        let fitted = fit_trial(cfg, &data)?;
        grid.iter()
            .map(|&mu| ensemble_accuracy(method, &data, &fitted, mu, cfg.b1))
            .collect::<Result<Vec<f64>>>()
    })?;
    let points = grid
        .iter()
        .enumerate()
        .map(|(j, &mu)| {
            let column: Vec<f64> = per_trial.iter().map(|row| row[j]).collect();
            MuPoint {
                mu,
                mean: mean(&column),
                std: std_dev(&column),
            }
        })
        .collect();
    Ok(MuSweepReport {
        method,
        points,
        per_trial,
        aborted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveTrial {
    pub trial: usize,
    pub seed: u64,
    pub budget: usize,
    pub partition_fingerprint: u64,
    pub curves: BTreeMap<StrategyKind, LearningCurve>,
    pub query_logs: BTreeMap<StrategyKind, Vec<QueryRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AulcRow {
    pub strategy: StrategyKind,
    pub aulc: f64,
    pub std: f64,
    /// Paired against `Random`; `None` when Random was not run or too few trials.
    pub p_vs_random: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveReport {
    pub evaluator: TransferMethod,
    pub trials: Vec<ActiveTrial>,
    pub curves: BTreeMap<StrategyKind, Vec<CurvePoint>>,
    pub aulc: Vec<AulcRow>,
    pub aborted: Vec<AbortedTrial>,
}

impl ActiveReport {
    pub fn aulc_column(&self, strategy: StrategyKind) -> Vec<f64> {
        self.trials
            .iter()
            .map(|t| t.curves[&strategy].aulc())
            .collect()
    }

    pub fn mean_aulc(&self, strategy: StrategyKind) -> Option<f64> {
        self.aulc
            .iter()
            .find(|r| r.strategy == strategy)
            .map(|r| r.aulc)
    }
}

/// Query budget for a source collection: `budget_fraction` of all source
/// examples, rounded down.
pub fn active_budget(budget_fraction: f64, total_examples: usize) -> usize {
    let raw = budget_fraction * total_examples as f64;
    ((raw + 1e-9 * raw.max(1.0)).floor() as usize).min(total_examples)
}

fn run_active_trial(cfg: &ExperimentConfig, trial: usize) -> Result<ActiveTrial> {
    let data = prepare_trial(cfg, trial)?;
    let total_examples: usize = data.sources.iter().map(DomainDataset::len).sum();
    let total_unlabeled: usize = data.sources.iter().map(|s| s.unlabeled.len()).sum();
    let budget = active_budget(cfg.budget_fraction, total_examples).min(total_unlabeled);
    let context = EnsembleContext {
        proximity: data.proximity.clone(),
        params: cfg.params(),
    };
    let train = cfg.train_config(data.seed);
    let active_seed = rng::sub_seed(data.seed, streams::ACTIVE);
    let evaluator = cfg.evaluator;

    let mut fingerprint = None;
    let mut curves = BTreeMap::new();
    let mut query_logs = BTreeMap::new();
    for &strategy in &cfg.strategies {
        let mut state = ActiveState::new(
            data.sources.clone(),
            data.alphas.clone(),
            context.clone(),
            train,
            budget,
            active_seed,
        )?;
        let fp = state.partition_fingerprint();
        match fingerprint {
            None => fingerprint = Some(fp),
            Some(expected) if expected != fp => {
                return Err(Error::InvalidConfig(
                    "strategies saw different initial partitions".into(),
                ));
            }
            _ => {}
        }
        let curve = run_active(&mut state, strategy, budget, |s| {
            let ensemble = s.ensemble()?;
            match evaluator {
                TransferMethod::PwMstlB => accuracy(&data.target_test, |x| {
                    predict_weighted_vote(&ensemble.models, &ensemble.weights.omega, x)
                }),
                _ => accuracy(&data.target_test, |x| ensemble.predict(x)),
            }
        })?;
        curves.insert(strategy, curve);
        query_logs.insert(strategy, state.query_log().to_vec());
    }
    Ok(ActiveTrial {
        trial,
        seed: data.seed,
        budget,
        partition_fingerprint: fingerprint.unwrap_or_default(),
        curves,
        query_logs,
    })
}

/// Runs every configured strategy from the same initial partition per trial
/// and averages the learning curves.
pub fn run_active_experiment(cfg: &ExperimentConfig) -> Result<ActiveReport> {
    if cfg.strategies.is_empty() {
        return Err(Error::InvalidConfig("strategies must not be empty".into()));
    }
    let (trials, aborted) = run_trials(cfg, |t| run_active_trial(cfg, t))?;

    let mut curves = BTreeMap::new();
    for &strategy in &cfg.strategies {
        let len = trials
            .iter()
            .map(|t| t.curves[&strategy].points.len())
            .min()
            .unwrap_or(0);
        let points = (0..len)
            .map(|i| {
                let column: Vec<f64> = trials
                    .iter()
                    .map(|t| t.curves[&strategy].points[i].1)
                    .collect();
                CurvePoint {
                    t: trials[0].curves[&strategy].points[i].0,
                    mean: mean(&column),
                    std: std_dev(&column),
                }
            })
            .collect();
        curves.insert(strategy, points);
    }

    let column =
        |s: StrategyKind| -> Vec<f64> { trials.iter().map(|t| t.curves[&s].aulc()).collect() };
    let random = cfg
        .strategies
        .contains(&StrategyKind::Random)
        .then(|| column(StrategyKind::Random));
    let mut aulc = Vec::with_capacity(cfg.strategies.len());
    for &strategy in &cfg.strategies {
        let values = column(strategy);
        let p_vs_random = match &random {
            Some(r) if values.len() >= 2 => Some(paired_significance(&values, r)?),
            _ => None,
        };
        aulc.push(AulcRow {
            strategy,
            aulc: mean(&values),
            std: std_dev(&values),
            p_vs_random,
        });
    }
    Ok(ActiveReport {
        evaluator: cfg.evaluator,
        trials,
        curves,
        aulc,
        aborted,
    })
}
