//! Active learning on source domains against a simulated oracle.
//!
//! AMSAT picks a source by an explore/exploit switch (explore when the
//! labeled ratios are uneven, favoring label-scarce sources; exploit by the
//! ensemble weights otherwise), then queries the unlabeled example maximizing
//! uncertainty times its frozen matching weight. Baselines share the same
//! bookkeeping and retraining.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{DomainDataset, Label, LabeledExample};
use crate::ensemble::{
    combine_weights, EnsembleWeights, ProximityVector, PwMstlModel, RelationMatrix,
};
use crate::error::{Error, Result};
use crate::kernel::KmmSolution;
use crate::pipeline::{relations_for, train_source_model, EnsembleParams};
use crate::rng::{self, streams, Rng};
use crate::svm::{uncertainty_from_margin, LinearModel, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "AMSAT")]
    Amsat,
    #[serde(rename = "AMSAT_US")]
    AmsatUs,
    Random,
    Uncertainty,
    Representative,
    Proximity,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::Amsat,
        StrategyKind::AmsatUs,
        StrategyKind::Random,
        StrategyKind::Uncertainty,
        StrategyKind::Representative,
        StrategyKind::Proximity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Amsat => "AMSAT",
            StrategyKind::AmsatUs => "AMSAT_US",
            StrategyKind::Random => "Random",
            StrategyKind::Uncertainty => "Uncertainty",
            StrategyKind::Representative => "Representative",
            StrategyKind::Proximity => "Proximity",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub step: usize,
    pub source: usize,
    /// Position in the source's aggregate (labeled-then-unlabeled) order at
    /// initialization; stable across pool moves.
    pub index: usize,
    pub explored: bool,
    pub label: Label,
}

/// Learning curve: `(queries so far, accuracy)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<(usize, f64)>,
}

impl LearningCurve {
    /// Mean accuracy over all recorded points.
    pub fn aulc(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        self.points.iter().map(|(_, a)| a).sum::<f64>() / self.points.len() as f64
    }
}

/// `min(1, KL(beta || uniform))` in nats.
pub fn exploration_probability(beta: &[f64]) -> Result<f64> {
    if beta.is_empty() {
        return Err(Error::EmptyInput("labeled ratios"));
    }
    let sum: f64 = beta.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || beta.iter().any(|b| !b.is_finite() || *b < 0.0) {
        return Err(Error::NotNormalized(sum));
    }
    let k = beta.len() as f64;
    let kl: f64 = beta
        .iter()
        .filter(|b| **b > 0.0)
        .map(|b| b * (b * k).ln())
        .sum();
    Ok(kl.clamp(0.0, 1.0))
}

/// Source-picking distribution.
///
/// Exploring weights sources by `1 / (n_labeled + 1)`; exploiting uses the
/// ensemble weights. Sources without unlabeled data get zero mass. If the
/// remaining mass is zero it is spread uniformly over the available sources.
pub fn source_distribution(
    labeled_counts: &[usize],
    unlabeled_counts: &[usize],
    omega: &[f64],
    explore: bool,
) -> Result<Vec<f64>> {
    let k = labeled_counts.len();
    if unlabeled_counts.len() != k || omega.len() != k {
        return Err(Error::LengthMismatch {
            what: "source counts vs weights",
            left: k,
            right: omega.len().min(unlabeled_counts.len()),
        });
    }
    if unlabeled_counts.iter().all(|&u| u == 0) {
        return Err(Error::NoUnlabeled("any source".into()));
    }
    let mut q: Vec<f64> = (0..k)
        .map(|i| {
            if unlabeled_counts[i] == 0 {
                0.0
            } else if explore {
                1.0 / (labeled_counts[i] as f64 + 1.0)
            } else {
                omega[i].max(0.0)
            }
        })
        .collect();
    let mut z: f64 = q.iter().sum();
    if !(z > 0.0 && z.is_finite()) {
        for (qi, &u) in q.iter_mut().zip(unlabeled_counts) {
            *qi = if u > 0 { 1.0 } else { 0.0 };
        }
        z = q.iter().sum();
    }
    q.iter_mut().for_each(|v| *v /= z);
    Ok(q)
}

/// Draws an index from a normalized distribution.
pub fn sample_index(q: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in q.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Index maximizing `uncertainty * alpha`; ties go to the lowest index.
pub fn argmax_weighted_uncertainty(margins: &[f64], alphas: &[f64]) -> Option<usize> {
    argmax(
        margins
            .iter()
            .zip(alphas)
            .map(|(h, a)| uncertainty_from_margin(*h) * a),
    )
}

fn argmax(scores: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.enumerate() {
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Proximity and weighting parameters that stay fixed during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleContext {
    pub proximity: ProximityVector,
    pub params: EnsembleParams,
}

/// Mutable state of one active-learning run.
#[derive(Debug, Clone)]
pub struct ActiveState {
    sources: Vec<DomainDataset>,
    labeled_ids: Vec<Vec<usize>>,
    unlabeled_ids: Vec<Vec<usize>>,
    alphas: Vec<KmmSolution>,
    models: Vec<LinearModel>,
    relations: RelationMatrix,
    weights: EnsembleWeights,
    context: EnsembleContext,
    train: TrainConfig,
    budget_total: usize,
    budget_spent: usize,
    rng_seed: u64,
    rng: Rng,
    query_log: Vec<QueryRecord>,
}

impl ActiveState {
    /// Sets up pools, trains the initial source models on their
    /// alpha-weighted labeled pools and builds the initial ensemble weights.
    ///
    /// Every source needs oracle labels for its unlabeled pool and at least
    /// one labeled example.
    pub fn new(
        sources: Vec<DomainDataset>,
        alphas: Vec<KmmSolution>,
        context: EnsembleContext,
        train: TrainConfig,
        budget: usize,
        rng_seed: u64,
    ) -> Result<Self> {
        let k = sources.len();
        if k == 0 {
            return Err(Error::EmptyInput(
                "active learning needs at least one source",
            ));
        }
        if alphas.len() != k || context.proximity.delta.len() != k {
            return Err(Error::LengthMismatch {
                what: "sources vs matching weights / proximity",
                left: k,
                right: alphas.len(),
            });
        }
        for (s, a) in sources.iter().zip(&alphas) {
            s.validate()?;
            if s.labeled.is_empty() {
                return Err(Error::EmptyInput(
                    "every source needs at least one labeled example",
                ));
            }
            if !s.unlabeled.is_empty() && s.hidden_labels.is_none() {
                return Err(Error::InvalidConfig(format!(
                    "source `{}` has no oracle labels",
                    s.name
                )));
            }
            if a.alpha.len() != s.len() {
                return Err(Error::LengthMismatch {
                    what: "matching weights vs source size",
                    left: a.alpha.len(),
                    right: s.len(),
                });
            }
        }
        let total_unlabeled: usize = sources.iter().map(|s| s.unlabeled.len()).sum();
        if budget > total_unlabeled {
            return Err(Error::InvalidConfig(format!(
                "budget {budget} exceeds the {total_unlabeled} unlabeled source examples"
            )));
        }

        let labeled_ids = sources
            .iter()
            .map(|s| (0..s.labeled.len()).collect())
            .collect();
        let unlabeled_ids = sources
            .iter()
            .map(|s| (s.labeled.len()..s.len()).collect())
            .collect();
        let mut state = Self {
            sources,
            labeled_ids,
            unlabeled_ids,
            alphas,
            models: Vec::with_capacity(k),
            relations: crate::ensemble::single_source_relation(context.params.beta1),
            weights: EnsembleWeights {
                omega: context.proximity.delta.clone(),
                mu: context.params.mu,
            },
            context,
            train,
            budget_total: budget,
            budget_spent: 0,
            rng_seed,
            rng: rng::stream(rng_seed, streams::ACTIVE),
            query_log: Vec::new(),
        };
        for i in 0..k {
            let model = state.fit_model(i)?;
            state.models.push(model);
        }
        state.refresh_weights()?;
        Ok(state)
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn sources(&self) -> &[DomainDataset] {
        &self.sources
    }

    pub fn alphas(&self) -> &[KmmSolution] {
        &self.alphas
    }

    pub fn models(&self) -> &[LinearModel] {
        &self.models
    }

    pub fn relations(&self) -> &RelationMatrix {
        &self.relations
    }

    pub fn weights(&self) -> &EnsembleWeights {
        &self.weights
    }

    pub fn query_log(&self) -> &[QueryRecord] {
        &self.query_log
    }

    pub fn budget_total(&self) -> usize {
        self.budget_total
    }

    pub fn budget_spent(&self) -> usize {
        self.budget_spent
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn labeled_counts(&self) -> Vec<usize> {
        self.sources.iter().map(|s| s.labeled.len()).collect()
    }

    pub fn unlabeled_counts(&self) -> Vec<usize> {
        self.sources.iter().map(|s| s.unlabeled.len()).collect()
    }

    /// Aggregate indices of the labeled pool of `source`.
    pub fn labeled_ids(&self, source: usize) -> &[usize] {
        &self.labeled_ids[source]
    }

    pub fn unlabeled_ids(&self, source: usize) -> &[usize] {
        &self.unlabeled_ids[source]
    }

    /// `beta_k = n_k^L / sum_j n_j^L`.
    pub fn labeled_ratios(&self) -> Vec<f64> {
        let counts = self.labeled_counts();
        let total: usize = counts.iter().sum();
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    }

    /// Current ensemble, evaluated by the learning-curve hooks.
    pub fn ensemble(&self) -> Result<PwMstlModel> {
        PwMstlModel::new(
            self.models.clone(),
            self.weights.clone(),
            self.relations.clone(),
            self.context.proximity.clone(),
            self.context.params.b1,
        )
    }

    /// Hash of the pools and matching weights; equal fingerprints mean two
    /// runs start from the same partition.
    pub fn partition_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (k, s) in self.sources.iter().enumerate() {
            self.labeled_ids[k].hash(&mut h);
            self.unlabeled_ids[k].hash(&mut h);
            for e in &s.labeled {
                e.y.hash(&mut h);
                e.x.iter().for_each(|v| v.to_bits().hash(&mut h));
            }
            for x in &s.unlabeled {
                x.iter().for_each(|v| v.to_bits().hash(&mut h));
            }
            self.alphas[k]
                .alpha
                .iter()
                .for_each(|v| v.to_bits().hash(&mut h));
        }
        h.finish()
    }

    fn fit_model(&self, source: usize) -> Result<LinearModel> {
        let alpha = &self.alphas[source].alpha;
        let weights: Vec<f64> = self.labeled_ids[source].iter().map(|&i| alpha[i]).collect();
        train_source_model(&self.sources[source].labeled, &weights, &self.train)
    }

    fn refresh_weights(&mut self) -> Result<()> {
        let sets: Vec<&[LabeledExample]> =
            self.sources.iter().map(|s| s.labeled.as_slice()).collect();
        self.relations = relations_for(&self.models, &sets, self.context.params.beta1)?;
        self.weights = combine_weights(
            &self.context.proximity,
            &self.relations,
            self.context.params.mu,
        )?;
        Ok(())
    }

    fn margins(&self, source: usize) -> Vec<f64> {
        let model = &self.models[source];
        self.sources[source]
            .unlabeled
            .iter()
            .map(|x| model.margin(x))
            .collect()
    }

    /// AMSAT example choice within `source`: returns the unlabeled-pool
    /// position maximizing uncertainty times the frozen matching weight.
    pub fn pick_example_amsat(&self, source: usize) -> Result<usize> {
        let alpha = &self.alphas[source].alpha;
        let alphas: Vec<f64> = self.unlabeled_ids[source]
            .iter()
            .map(|&i| alpha[i])
            .collect();
        argmax_weighted_uncertainty(&self.margins(source), &alphas)
            .ok_or_else(|| Error::NoUnlabeled(self.sources[source].name.clone()))
    }

    fn pick_example_uncertain(&self, source: usize) -> Result<usize> {
        argmax(
            self.margins(source)
                .into_iter()
                .map(uncertainty_from_margin),
        )
        .ok_or_else(|| Error::NoUnlabeled(self.sources[source].name.clone()))
    }

    /// Draws the Bernoulli switch and a source. Returns `(source, explored)`.
    fn pick_source_adaptive(&mut self) -> Result<(usize, bool)> {
        let p = exploration_probability(&self.labeled_ratios())?;
        let draw: f64 = self.rng.gen();
        let explore = draw < p;
        let q = source_distribution(
            &self.labeled_counts(),
            &self.unlabeled_counts(),
            &self.weights.omega,
            explore,
        )?;
        Ok((sample_index(&q, &mut self.rng), explore))
    }

    /// One query: choose `(source, pool position)` by `strategy`, label it
    /// from the oracle, retrain that source and refresh the ensemble weights.
    pub fn step(&mut self, strategy: StrategyKind) -> Result<QueryRecord> {
        if self.budget_spent >= self.budget_total {
            return Err(Error::BudgetExhausted {
                spent: self.budget_spent,
                total: self.budget_total,
            });
        }
        let unlabeled = self.unlabeled_counts();
        let total: usize = unlabeled.iter().sum();
        if total == 0 {
            return Err(Error::NoUnlabeled("any source".into()));
        }

        let (source, position, explored) = match strategy {
            StrategyKind::Amsat | StrategyKind::AmsatUs => {
                let (k, explored) = self.pick_source_adaptive()?;
                let pos = if strategy == StrategyKind::Amsat {
                    self.pick_example_amsat(k)?
                } else {
                    self.pick_example_uncertain(k)?
                };
                (k, pos, explored)
            }
            StrategyKind::Random => {
                let (k, pos) = locate(&unlabeled, self.rng.gen_range(0..total));
                (k, pos, false)
            }
            StrategyKind::Uncertainty => {
                let scores: Vec<f64> = (0..self.num_sources())
                    .flat_map(|k| self.margins(k))
                    .map(uncertainty_from_margin)
                    .collect();
                let flat = argmax(scores.into_iter()).expect("non-empty");
                let (k, pos) = locate(&unlabeled, flat);
                (k, pos, false)
            }
            StrategyKind::Representative => {
                let mut scores = Vec::with_capacity(total);
                for k in 0..self.num_sources() {
                    let alpha = &self.alphas[k];
                    let mean = alpha.mean_alpha();
                    let scale = if mean > 0.0 { 1.0 / mean } else { 0.0 };
                    scores.extend(
                        self.unlabeled_ids[k]
                            .iter()
                            .map(|&i| alpha.alpha[i] * scale),
                    );
                }
                let flat = argmax(scores.into_iter()).expect("non-empty");
                let (k, pos) = locate(&unlabeled, flat);
                (k, pos, false)
            }
            StrategyKind::Proximity => {
                let delta = &self.context.proximity.delta;
                let k = argmax((0..self.num_sources()).map(|k| {
                    if unlabeled[k] > 0 {
                        delta[k]
                    } else {
                        f64::NEG_INFINITY
                    }
                }))
                .expect("non-empty");
                let pos = self.rng.gen_range(0..unlabeled[k]);
                (k, pos, false)
            }
        };

        let record = self.acquire(source, position, explored)?;
        self.models[source] = self.fit_model(source)?;
        self.refresh_weights()?;
        Ok(record)
    }

    fn acquire(&mut self, source: usize, position: usize, explored: bool) -> Result<QueryRecord> {
        let ds = &mut self.sources[source];
        let hidden = ds.hidden_labels.as_mut().ok_or_else(|| {
            Error::InvalidConfig(format!("source `{}` has no oracle labels", ds.name))
        })?;
        let label = hidden.remove(position);
        let x = ds.unlabeled.remove(position);
        ds.labeled.push(LabeledExample::new(x, label));
        let index = self.unlabeled_ids[source].remove(position);
        self.labeled_ids[source].push(index);
        self.budget_spent += 1;
        let record = QueryRecord {
            step: self.budget_spent,
            source,
            index,
            explored,
            label,
        };
        self.query_log.push(record.clone());
        Ok(record)
    }
}

/// Maps a flat index over concatenated pools to `(pool, position)`.
fn locate(sizes: &[usize], mut flat: usize) -> (usize, usize) {
    for (k, &n) in sizes.iter().enumerate() {
        if flat < n {
            return (k, flat);
        }
        flat -= n;
    }
    unreachable!("flat index beyond total pool size")
}

/// Runs `budget` queries, calling `evaluate` before the first query and after
/// every query.
pub fn run_active<F>(
    state: &mut ActiveState,
    strategy: StrategyKind,
    budget: usize,
    mut evaluate: F,
) -> Result<LearningCurve>
where
    F: FnMut(&ActiveState) -> Result<f64>,
{
    let available: usize = state.unlabeled_counts().iter().sum();
    if budget > available {
        return Err(Error::InvalidConfig(format!(
            "budget {budget} exceeds the {available} unlabeled source examples"
        )));
    }
    state.budget_total = state.budget_spent + budget;
    let mut curve = LearningCurve::default();
    curve.points.push((state.budget_spent, evaluate(state)?));
    for _ in 0..budget {
        state.step(strategy)?;
        curve.points.push((state.budget_spent, evaluate(state)?));
    }
    Ok(curve)
}

pub fn write_query_log<W: Write>(log: &[QueryRecord], mut out: W) -> Result<()> {
    writeln!(out, "t,k,index,P,label")?;
    for r in log {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.step,
            r.source,
            r.index,
            u8::from(r.explored),
            r.label.value() as i32
        )?;
    }
    Ok(())
}
