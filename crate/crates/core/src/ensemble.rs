//! Source weighting and the peer-weighted ensemble predictor.
//!
//! Sources are weighted by combining proximity to the target (`delta`, from
//! MMD) with inter-source reliability (`R`, from peer error rates):
//! `omega = delta . [mu I + (1 - mu) R]`. At prediction time a source whose
//! margin falls below the confidence tolerance defers to its peers, weighted
//! by its row of `R`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{Label, LabeledExample};
use crate::error::{Error, Result};
use crate::svm::{zero_one_error, LinearModel};

/// Row-stochastic `K x K` matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationMatrix {
    pub rows: Vec<Vec<f64>>,
    pub beta1: f64,
}

impl RelationMatrix {
    pub fn k(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j]
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for row in &self.rows {
            let fields: Vec<String> = row.iter().map(|v| format!("{v:.9}")).collect();
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Builds `R` from a matrix of peer errors, `errors[i][j]` being the error of
/// source `j`'s model on source `i`'s labeled data. Diagonal entries are
/// ignored. Lower error gets higher weight.
pub fn relation_from_errors(errors: &[Vec<f64>], beta1: f64) -> Result<RelationMatrix> {
    let k = errors.len();
    if k < 2 {
        return Err(Error::InvalidConfig(format!(
            "relation matrix needs at least two sources, got {k}"
        )));
    }
    if !(beta1.is_finite() && beta1 >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "beta1 must be non-negative, got {beta1}"
        )));
    }
    let mut rows = Vec::with_capacity(k);
    for (i, row) in errors.iter().enumerate() {
        if row.len() != k {
            return Err(Error::LengthMismatch {
                what: "relation error row",
                left: row.len(),
                right: k,
            });
        }
        if row
            .iter()
            .enumerate()
            .any(|(j, e)| j != i && !e.is_finite())
        {
            return Err(Error::NonFinite("peer error"));
        }
        let min = (0..k)
            .filter(|&j| j != i)
            .map(|j| row[j])
            .fold(f64::INFINITY, f64::min);
        let mut out: Vec<f64> = (0..k)
            .map(|j| {
                if j == i {
                    0.0
                } else {
                    (-beta1 * (row[j] - min)).exp()
                }
            })
            .collect();
        let z: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= z);
        rows.push(out);
    }
    Ok(RelationMatrix { rows, beta1 })
}

/// Measures every model on every other source's labeled set and turns the
/// errors into a relation matrix.
pub fn compute_relation_matrix(
    models: &[LinearModel],
    labeled_sets: &[&[LabeledExample]],
    beta1: f64,
) -> Result<RelationMatrix> {
    let k = models.len();
    if labeled_sets.len() != k {
        return Err(Error::LengthMismatch {
            what: "models vs labeled sets",
            left: k,
            right: labeled_sets.len(),
        });
    }
    if k < 2 {
        return Err(Error::InvalidConfig(format!(
            "relation matrix needs at least two sources, got {k}"
        )));
    }
    let mut errors = vec![vec![0.0; k]; k];
    for (i, set) in labeled_sets.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::EmptyInput(
                "relation matrix needs a labeled example in every source",
            ));
        }
        for (j, model) in models.iter().enumerate() {
            if i != j {
                errors[i][j] = zero_one_error(model, set)?;
            }
        }
    }
    relation_from_errors(&errors, beta1)
}

/// Softmax of negated (powered) MMD values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityVector {
    pub delta: Vec<f64>,
    pub beta2: f64,
    pub rho: f64,
}

/// `delta_k = exp(-beta2 mmd_k^rho) / sum_j exp(-beta2 mmd_j^rho)`.
pub fn compute_proximity(mmd_values: &[f64], beta2: f64, rho: f64) -> Result<ProximityVector> {
    if mmd_values.is_empty() {
        return Err(Error::EmptyInput("proximity needs at least one source"));
    }
    if mmd_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("MMD value"));
    }
    if !(beta2.is_finite() && beta2 >= 0.0 && rho.is_finite() && rho > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "need beta2 >= 0 and rho > 0, got {beta2}, {rho}"
        )));
    }
    let logits: Vec<f64> = mmd_values
        .iter()
        .map(|m| -beta2 * m.max(0.0).powf(rho))
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut delta: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = delta.iter().sum();
    delta.iter_mut().for_each(|d| *d /= z);
    Ok(ProximityVector { delta, beta2, rho })
}

/// `1 / median(mmd^rho)`, or 1 when that median is zero.
pub fn auto_beta2(mmd_values: &[f64], rho: f64) -> f64 {
    let mut v: Vec<f64> = mmd_values.iter().map(|m| m.max(0.0).powf(rho)).collect();
    if v.is_empty() {
        return 1.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len();
    let median = if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    };
    if median > 0.0 && median.is_finite() {
        1.0 / median
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub omega: Vec<f64>,
    pub mu: f64,
}

/// `omega_j = mu delta_j + (1 - mu) sum_k delta_k R_kj`.
///
/// With a single source there are no peers and `omega = delta`.
pub fn combine_weights(
    proximity: &ProximityVector,
    relations: &RelationMatrix,
    mu: f64,
) -> Result<EnsembleWeights> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::InvalidConfig(format!(
            "mu must lie in [0, 1], got {mu}"
        )));
    }
    let k = proximity.delta.len();
    if relations.k() != k {
        return Err(Error::LengthMismatch {
            what: "proximity vs relation matrix",
            left: k,
            right: relations.k(),
        });
    }
    if k == 1 {
        return Ok(EnsembleWeights {
            omega: proximity.delta.clone(),
            mu,
        });
    }
    let delta = &proximity.delta;
    let omega = (0..k)
        .map(|j| {
            mu * delta[j] + (1.0 - mu) * (0..k).map(|i| delta[i] * relations.get(i, j)).sum::<f64>()
        })
        .collect();
    Ok(EnsembleWeights { omega, mu })
}

/// Relation matrix for a single source: one zero entry, no peers.
pub fn single_source_relation(beta1: f64) -> RelationMatrix {
    RelationMatrix {
        rows: vec![vec![0.0]],
        beta1,
    }
}

/// Trained ensemble ready for prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct PwMstlModel {
    pub models: Vec<LinearModel>,
    pub weights: EnsembleWeights,
    pub relations: RelationMatrix,
    pub proximity: ProximityVector,
    /// Confidence tolerance: margins below it defer to peers.
    pub b1: f64,
}

impl PwMstlModel {
    pub fn new(
        models: Vec<LinearModel>,
        weights: EnsembleWeights,
        relations: RelationMatrix,
        proximity: ProximityVector,
        b1: f64,
    ) -> Result<Self> {
        let k = models.len();
        if k == 0 {
            return Err(Error::EmptyInput("ensemble needs at least one model"));
        }
        if weights.omega.len() != k || relations.k() != k || proximity.delta.len() != k {
            return Err(Error::InvalidConfig(
                "ensemble component sizes disagree".into(),
            ));
        }
        let dim = models[0].dim();
        if let Some(m) = models.iter().find(|m| m.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: m.dim(),
            });
        }
        if !(b1.is_finite() && b1 >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "b1 must be non-negative, got {b1}"
            )));
        }
        Ok(Self {
            models,
            weights,
            relations,
            proximity,
            b1,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<(Label, f64)> {
        pwmstl_predict(self, x)
    }
}

fn check_dim(models: &[LinearModel], x: &[f64]) -> Result<()> {
    match models.first() {
        Some(m) if m.dim() != x.len() => Err(Error::DimensionMismatch {
            expected: m.dim(),
            found: x.len(),
        }),
        _ => Ok(()),
    }
}

/// Peer-substituted weighted vote.
pub fn pwmstl_predict(model: &PwMstlModel, x: &[f64]) -> Result<(Label, f64)> {
    check_dim(&model.models, x)?;
    let margins: Vec<f64> = model.models.iter().map(|m| m.margin(x)).collect();
    Ok(peer_vote(
        &margins,
        &model.weights.omega,
        &model.relations,
        model.b1,
    ))
}

/// Peer-substituted vote on precomputed margins.
pub fn peer_vote(
    margins: &[f64],
    omega: &[f64],
    relations: &RelationMatrix,
    b1: f64,
) -> (Label, f64) {
    let k = margins.len();
    let score: f64 = (0..k)
        .map(|i| {
            let own = margins[i];
            let p = if own.abs() < b1 && k > 1 {
                (0..k)
                    .filter(|&m| m != i)
                    .map(|m| relations.get(i, m) * margins[m])
                    .sum()
            } else {
                own
            };
            omega[i] * p
        })
        .sum();
    (Label::from_sign(score), score)
}

/// Plain weighted vote `sign(sum_k omega_k h_k(x))`.
pub fn predict_weighted_vote(
    models: &[LinearModel],
    omega: &[f64],
    x: &[f64],
) -> Result<(Label, f64)> {
    if models.len() != omega.len() {
        return Err(Error::LengthMismatch {
            what: "models vs weights",
            left: models.len(),
            right: omega.len(),
        });
    }
    check_dim(models, x)?;
    let score: f64 = models.iter().zip(omega).map(|(m, w)| w * m.margin(x)).sum();
    Ok((Label::from_sign(score), score))
}

/// Fraction of `test` classified correctly by `predict`.
pub fn accuracy<F>(test: &[LabeledExample], mut predict: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(Label, f64)>,
{
    if test.is_empty() {
        return Err(Error::EmptyInput("test set"));
    }
    let mut correct = 0usize;
    for e in test {
        if predict(&e.x)?.0 == e.y {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Writes `delta` and `omega` as a two-row CSV.
pub fn write_weights_csv<W: Write>(
    proximity: &ProximityVector,
    weights: &EnsembleWeights,
    mut out: W,
) -> Result<()> {
    for (name, row) in [("delta", &proximity.delta), ("omega", &weights.omega)] {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:.9}")).collect();
        writeln!(out, "{name},{}", fields.join(","))?;
    }
    Ok(())
}
