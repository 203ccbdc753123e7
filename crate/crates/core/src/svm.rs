//! Instance-weighted linear SVM trained by dual coordinate descent.
//!
//! The bias is learned as the weight of an augmented constant feature, so it
//! is regularized together with `w`.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Label, LabeledExample};
use crate::error::{Error, Result};
use crate::rng::{self, streams};

/// Decision value magnitude of the constant model returned for single-class
/// training data. Kept far below any sensible confidence tolerance so the
/// model is always treated as unsure.
pub const SINGLE_CLASS_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub train_size: usize,
    /// Set when the training data held only one class; the model then
    /// predicts that class everywhere.
    pub single_class: Option<Label>,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// `w . x + b` without a dimension check.
    #[inline]
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b
    }

    pub fn predict(&self, x: &[f64]) -> Result<Label> {
        decision_value(self, x).map(Label::from_sign)
    }

    /// Writes `w_1,...,w_d,b` on one line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let fields: Vec<String> = self
            .w
            .iter()
            .chain(std::iter::once(&self.b))
            .map(|v| v.to_string())
            .collect();
        writeln!(out, "{}", fields.join(","))?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let line = input
            .lines()
            .next()
            .transpose()?
            .ok_or(Error::EmptyInput("model file"))?;
        let values = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidConfig(format!("bad model value: {e}")))?;
        let (b, w) = values.split_last().ok_or(Error::EmptyInput("model file"))?;
        Ok(Self {
            w: w.to_vec(),
            b: *b,
            train_size: 0,
            single_class: None,
        })
    }
}

fn default_c() -> f64 {
    1.0
}
fn default_tol() -> f64 {
    1e-4
}
fn default_epochs() -> usize {
    200
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            c: default_c(),
            tol: default_tol(),
            max_epochs: default_epochs(),
            seed: 0,
        }
    }
}

/// Trains `min 0.5 (|w|^2 + b^2) + C sum_i weight_i hinge(y_i, w.x_i + b)`.
///
/// Each dual variable is boxed by `C * weight_i`; zero-weight examples are
/// dropped before training. Coordinates are visited in a fresh random order
/// every epoch, and training stops once the largest projected-gradient
/// violation of an epoch is at most `tol`.
pub fn train_weighted_svm(
    examples: &[LabeledExample],
    weights: &[f64],
    cfg: &TrainConfig,
) -> Result<LinearModel> {
    if examples.len() != weights.len() {
        return Err(Error::LengthMismatch {
            what: "examples vs weights",
            left: examples.len(),
            right: weights.len(),
        });
    }
    if examples.is_empty() {
        return Err(Error::EmptyInput("SVM training set"));
    }
    if !(cfg.c.is_finite() && cfg.c > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "SVM C must be positive, got {}",
            cfg.c
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidConfig(
            "example weights must be finite and non-negative".into(),
        ));
    }
    let dim = examples[0].x.len();
    if let Some(e) = examples.iter().find(|e| e.x.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: e.x.len(),
        });
    }

    let active: Vec<(&LabeledExample, f64)> = examples
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(e, w)| (e, cfg.c * w))
        .collect();
    if active.is_empty() {
        return Err(Error::AllWeightsZero);
    }

    let first = active[0].0.y;
    if active.iter().all(|(e, _)| e.y == first) {
        return Ok(LinearModel {
            w: vec![0.0; dim],
            b: first.value() * SINGLE_CLASS_MARGIN,
            train_size: active.len(),
            single_class: Some(first),
        });
    }

    let n = active.len();
    let ys: Vec<f64> = active.iter().map(|(e, _)| e.y.value()).collect();
    let caps: Vec<f64> = active.iter().map(|(_, c)| *c).collect();
    let diag: Vec<f64> = active
        .iter()
        .map(|(e, _)| e.x.iter().map(|v| v * v).sum::<f64>() + 1.0)
        .collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::stream(cfg.seed, streams::SVM);
    let mut dual: f64 = 0.0;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut max_violation: f64 = 0.0;
        for &i in &order {
            let x = &active[i].0.x;
            let margin = w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b;
            let g = ys[i] * margin - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= caps[i] {
                g.max(0.0)
            } else {
                g
            };
            max_violation = max_violation.max(pg.abs());
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / diag[i]).clamp(0.0, caps[i]);
                let delta = (alpha[i] - old) * ys[i];
                for (wj, xj) in w.iter_mut().zip(x) {
                    *wj += delta * xj;
                }
                b += delta;
            }
        }
        if cfg!(debug_assertions) {
            let next =
                alpha.iter().sum::<f64>() - 0.5 * (w.iter().map(|v| v * v).sum::<f64>() + b * b);
            debug_assert!(
                next >= dual - 1e-9 * dual.abs().max(1.0),
                "dual objective decreased at epoch {epoch}: {dual} -> {next}"
            );
            dual = next;
        }
        if max_violation <= cfg.tol {
            break;
        }
    }

    Ok(LinearModel {
        w,
        b,
        train_size: n,
        single_class: None,
    })
}

pub fn decision_value(model: &LinearModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: x.len(),
        });
    }
    Ok(model.margin(x))
}

/// Fraction of misclassified examples; `h(x) = 0` predicts `+1`.
pub fn zero_one_error(model: &LinearModel, examples: &[LabeledExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("error evaluation set"));
    }
    let mut wrong = 0usize;
    for e in examples {
        if Label::from_sign(decision_value(model, &e.x)?) != e.y {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / examples.len() as f64)
}

/// `4 s(h) (1 - s(h))` with `s` the logistic function: 1 on the boundary,
/// decreasing in `|h|`.
pub fn uncertainty_from_margin(h: f64) -> f64 {
    let e = (-h.abs()).exp();
    4.0 * e / ((1.0 + e) * (1.0 + e))
}

pub fn uncertainty_score(model: &LinearModel, x: &[f64]) -> Result<f64> {
    decision_value(model, x).map(uncertainty_from_margin)
}
