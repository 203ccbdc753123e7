//! Glue shared by the transfer and active-learning runs.

use serde::{Deserialize, Serialize};

use crate::data::{Label, LabeledExample};
use crate::ensemble::{
    combine_weights, compute_relation_matrix, single_source_relation, EnsembleWeights,
    ProximityVector, PwMstlModel, RelationMatrix,
};
use crate::error::Result;
use crate::svm::{train_weighted_svm, LinearModel, TrainConfig};

/// Hyperparameters of the ensemble stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleParams {
    pub mu: f64,
    pub b1: f64,
    pub beta1: f64,
    pub rho: f64,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        Self {
            mu: 0.2,
            b1: 1.0,
            beta1: 5.0,
            rho: 1.0,
        }
    }
}

/// Trains one source model on its labeled pool weighted by the pool's
/// matching weights. When matching zeroes every labeled example of a class
/// the pool contains (or every example outright), the pool is trained
/// unweighted instead, so the source still contributes a two-sided model.
pub fn train_source_model(
    labeled: &[LabeledExample],
    alpha: &[f64],
    cfg: &TrainConfig,
) -> Result<LinearModel> {
    if alpha.len() == labeled.len() && drops_a_class(labeled, alpha) {
        log::debug!(
            "matching weights remove a class from {} labeled examples; training unweighted",
            labeled.len()
        );
        return train_weighted_svm(labeled, &vec![1.0; labeled.len()], cfg);
    }
    train_weighted_svm(labeled, alpha, cfg)
}

fn drops_a_class(labeled: &[LabeledExample], alpha: &[f64]) -> bool {
    let present = |weighted: bool, y: Label| {
        labeled
            .iter()
            .zip(alpha)
            .any(|(e, &a)| e.y == y && (!weighted || a > 0.0))
    };
    [Label::Positive, Label::Negative]
        .into_iter()
        .any(|y| present(false, y) && !present(true, y))
}

/// Relation matrix for any `K >= 1`.
pub fn relations_for(
    models: &[LinearModel],
    labeled_sets: &[&[LabeledExample]],
    beta1: f64,
) -> Result<RelationMatrix> {
    if models.len() == 1 {
        Ok(single_source_relation(beta1))
    } else {
        compute_relation_matrix(models, labeled_sets, beta1)
    }
}

pub fn assemble(
    models: Vec<LinearModel>,
    relations: RelationMatrix,
    proximity: ProximityVector,
    params: &EnsembleParams,
) -> Result<PwMstlModel> {
    let weights: EnsembleWeights = combine_weights(&proximity, &relations, params.mu)?;
    PwMstlModel::new(models, weights, relations, proximity, params.b1)
}
