//! Domain datasets: labeled and unlabeled pools, synthetic generation under
//! controlled distribution shift, stratified splitting and dense CSV I/O.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams, Rng};

pub type FeatureVector = Vec<f64>;

/// Binary class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    /// Sign convention: ties (`value == 0`) map to `Positive`.
    pub fn from_sign(value: f64) -> Label {
        if value >= 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Label::Negative => -1.0,
            Label::Positive => 1.0,
        }
    }

    fn token(self) -> &'static str {
        match self {
            Label::Negative => "-1",
            Label::Positive => "+1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub x: FeatureVector,
    pub y: Label,
}

impl LabeledExample {
    pub fn new(x: FeatureVector, y: Label) -> Self {
        Self { x, y }
    }
}

/// One domain: labeled pool, unlabeled pool and (optionally) the oracle
/// labels of the unlabeled pool.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub name: String,
    pub labeled: Vec<LabeledExample>,
    pub unlabeled: Vec<FeatureVector>,
    pub hidden_labels: Option<Vec<Label>>,
}

impl DomainDataset {
    /// Builds a dataset, checking the shared-dimension and finiteness
    /// invariants.
    pub fn new(
        name: impl Into<String>,
        labeled: Vec<LabeledExample>,
        unlabeled: Vec<FeatureVector>,
        hidden_labels: Option<Vec<Label>>,
    ) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            labeled,
            unlabeled,
            hidden_labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(hidden) = &self.hidden_labels {
            if hidden.len() != self.unlabeled.len() {
                return Err(Error::LengthMismatch {
                    what: "hidden labels vs unlabeled pool",
                    left: hidden.len(),
                    right: self.unlabeled.len(),
                });
            }
        }
        let mut dim = None;
        for x in self.labeled.iter().map(|e| &e.x).chain(&self.unlabeled) {
            match dim {
                None => dim = Some(x.len()),
                Some(d) if d != x.len() => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: x.len(),
                    })
                }
                _ => {}
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("feature vector"));
            }
        }
        Ok(())
    }

    /// Feature dimension, or `None` for an empty dataset.
    pub fn dim(&self) -> Option<usize> {
        self.labeled
            .first()
            .map(|e| e.x.len())
            .or_else(|| self.unlabeled.first().map(Vec::len))
    }

    pub fn len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Labeled points followed by unlabeled points, in stable order.
    pub fn aggregate_points(&self) -> Vec<FeatureVector> {
        self.labeled
            .iter()
            .map(|e| e.x.clone())
            .chain(self.unlabeled.iter().cloned())
            .collect()
    }

    /// Every example with a known label (labeled pool plus oracle labels).
    pub fn all_labeled(&self) -> Option<Vec<LabeledExample>> {
        let mut out = self.labeled.clone();
        if self.unlabeled.is_empty() {
            return Some(out);
        }
        let hidden = self.hidden_labels.as_ref()?;
        out.extend(
            self.unlabeled
                .iter()
                .zip(hidden)
                .map(|(x, &y)| LabeledExample::new(x.clone(), y)),
        );
        Some(out)
    }

    fn class_counts(&self) -> (usize, usize) {
        let pos = self
            .labeled
            .iter()
            .filter(|e| e.y == Label::Positive)
            .count();
        (pos, self.labeled.len() - pos)
    }
}

fn default_dim() -> usize {
    10
}
fn default_num_sources() -> usize {
    5
}
fn default_one() -> f64 {
    1.0
}
fn default_label_drift() -> f64 {
    0.1
}
fn default_label_noise() -> f64 {
    0.1
}
fn default_per_class() -> usize {
    50
}
fn default_target_size() -> usize {
    100
}
fn default_proximity() -> Vec<f64> {
    vec![0.2, 0.4, 0.6, 0.8, 1.0]
}

/// Parameters of the Gaussian shift generator.
///
/// `target_mean` and `base_weights` may be left empty, in which case they
/// default to the origin and the normalized all-ones vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    #[serde(default = "default_num_sources")]
    pub num_sources: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub target_mean: FeatureVector,
    #[serde(default = "default_one")]
    pub fluctuation_scale: f64,
    #[serde(default = "default_proximity")]
    pub proximity: Vec<f64>,
    #[serde(default = "default_one")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub base_weights: FeatureVector,
    #[serde(default = "default_label_drift")]
    pub label_drift: f64,
    #[serde(default = "default_label_noise")]
    pub label_noise_sigma: f64,
    #[serde(default = "default_per_class")]
    pub per_source_pos: usize,
    #[serde(default = "default_per_class")]
    pub per_source_neg: usize,
    #[serde(default = "default_target_size")]
    pub target_test_size: usize,
    /// Size of the target's unlabeled training pool.
    #[serde(default = "default_target_size")]
    pub target_pool_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_sources: default_num_sources(),
            dim: default_dim(),
            target_mean: Vec::new(),
            fluctuation_scale: 1.0,
            proximity: default_proximity(),
            noise_sigma: 1.0,
            base_weights: Vec::new(),
            label_drift: default_label_drift(),
            label_noise_sigma: default_label_noise(),
            per_source_pos: default_per_class(),
            per_source_neg: default_per_class(),
            target_test_size: default_target_size(),
            target_pool_size: default_target_size(),
            seed: 0,
        }
    }
}

/// Rejection-sampling budget, per requested example.
const MAX_DRAWS_PER_EXAMPLE: usize = 1000;

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_sources == 0 {
            return bad("num_sources must be positive".into());
        }
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.proximity.len() != self.num_sources {
            return bad(format!(
                "proximity has {} entries for {} sources",
                self.proximity.len(),
                self.num_sources
            ));
        }
        if self.proximity.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return bad("proximity values must be finite and non-negative".into());
        }
        for (name, v) in [
            ("target_mean", &self.target_mean),
            ("base_weights", &self.base_weights),
        ] {
            if !v.is_empty() && v.len() != self.dim {
                return bad(format!(
                    "{name} has length {} but dim is {}",
                    v.len(),
                    self.dim
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return bad(format!("{name} must be finite"));
            }
        }
        if !(self.fluctuation_scale.is_finite() && self.fluctuation_scale > 0.0) {
            return bad("fluctuation_scale must be positive".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma > 0.0) {
            return bad("noise_sigma must be positive".into());
        }
        if !(self.label_drift.is_finite() && self.label_drift >= 0.0) {
            return bad("label_drift must be non-negative".into());
        }
        if !(self.label_noise_sigma.is_finite() && self.label_noise_sigma >= 0.0) {
            return bad("label_noise_sigma must be non-negative".into());
        }
        if self.per_source_pos == 0 || self.per_source_neg == 0 {
            return bad("per_source_pos and per_source_neg must be positive".into());
        }
        if self.target_test_size == 0 {
            return bad("target_test_size must be positive".into());
        }
        Ok(())
    }

    pub fn resolved_target_mean(&self) -> FeatureVector {
        if self.target_mean.is_empty() {
            vec![0.0; self.dim]
        } else {
            self.target_mean.clone()
        }
    }

    pub fn resolved_base_weights(&self) -> FeatureVector {
        if self.base_weights.is_empty() {
            vec![1.0 / (self.dim as f64).sqrt(); self.dim]
        } else {
            self.base_weights.clone()
        }
    }
}

/// Distribution parameters drawn for one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainParams {
    pub mean: FeatureVector,
    pub labeler: FeatureVector,
}

/// Output of [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDomains {
    /// Fully labeled sources.
    pub sources: Vec<DomainDataset>,
    /// Balanced labeled test set plus unlabeled training pool with oracle labels.
    pub target: DomainDataset,
    pub source_params: Vec<DomainParams>,
    pub target_params: DomainParams,
}

/// Draws `K` shifted sources and one target.
///
/// Source `k` samples `x ~ N(mu_T + p_k * d_mu_k, sigma^2 I)` and labels with
/// `sign((w0 + drift * d_w_k) . x + eps)`; the target uses `p = 0` and its own
/// labeler drift. Class counts are exact via rejection sampling.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticDomains> {
    config.validate()?;
    let mut rng = rng::stream(config.seed, streams::GENERATE);
    let mu_t = config.resolved_target_mean();
    let w0 = config.resolved_base_weights();

    let mut source_params = Vec::with_capacity(config.num_sources);
    for &p in &config.proximity {
        let d_mu = gaussian_vector(&mut rng, config.dim, config.fluctuation_scale);
        let d_w = gaussian_vector(&mut rng, config.dim, config.label_drift);
        source_params.push(DomainParams {
            mean: mu_t.iter().zip(&d_mu).map(|(m, d)| m + p * d).collect(),
            labeler: w0.iter().zip(&d_w).map(|(w, d)| w + d).collect(),
        });
    }
    let d_w = gaussian_vector(&mut rng, config.dim, config.label_drift);
    let target_params = DomainParams {
        mean: mu_t.clone(),
        labeler: w0.iter().zip(&d_w).map(|(w, d)| w + d).collect(),
    };

    let mut sources = Vec::with_capacity(config.num_sources);
    for (k, params) in source_params.iter().enumerate() {
        let name = format!("source{k}");
        let labeled = sample_balanced(
            &mut rng,
            config,
            params,
            config.per_source_pos,
            config.per_source_neg,
            &name,
        )?;
        sources.push(DomainDataset::new(name, labeled, Vec::new(), None)?);
    }

    let test_pos = config.target_test_size.div_ceil(2);
    let test_neg = config.target_test_size - test_pos;
    let test = sample_balanced(
        &mut rng,
        config,
        &target_params,
        test_pos,
        test_neg,
        "target",
    )?;
    let mut pool = Vec::with_capacity(config.target_pool_size);
    let mut pool_labels = Vec::with_capacity(config.target_pool_size);
    for _ in 0..config.target_pool_size {
        let (x, y) = draw_example(&mut rng, config, &target_params);
        pool.push(x);
        pool_labels.push(y);
    }
    let target = DomainDataset::new("target", test, pool, Some(pool_labels))?;

    Ok(SyntheticDomains {
        sources,
        target,
        source_params,
        target_params,
    })
}

fn gaussian_vector(rng: &mut Rng, dim: usize, scale: f64) -> FeatureVector {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

fn draw_example(
    rng: &mut Rng,
    config: &SyntheticConfig,
    params: &DomainParams,
) -> (FeatureVector, Label) {
    let x: FeatureVector = params
        .mean
        .iter()
        .map(|m| {
            let z: f64 = StandardNormal.sample(rng);
            m + config.noise_sigma * z
        })
        .collect();
    let eps = if config.label_noise_sigma > 0.0 {
        Normal::new(0.0, config.label_noise_sigma)
            .expect("validated sigma")
            .sample(rng)
    } else {
        0.0
    };
    let score: f64 = params
        .labeler
        .iter()
        .zip(&x)
        .map(|(w, v)| w * v)
        .sum::<f64>()
        + eps;
    (x, Label::from_sign(score))
}

fn sample_balanced(
    rng: &mut Rng,
    config: &SyntheticConfig,
    params: &DomainParams,
    n_pos: usize,
    n_neg: usize,
    domain: &str,
) -> Result<Vec<LabeledExample>> {
    let cap = MAX_DRAWS_PER_EXAMPLE * (n_pos + n_neg);
    let (mut pos, mut neg) = (0, 0);
    let mut out = Vec::with_capacity(n_pos + n_neg);
    for _ in 0..cap {
        if pos == n_pos && neg == n_neg {
            return Ok(out);
        }
        let (x, y) = draw_example(rng, config, params);
        match y {
            Label::Positive if pos < n_pos => pos += 1,
            Label::Negative if neg < n_neg => neg += 1,
            _ => continue,
        }
        out.push(LabeledExample::new(x, y));
    }
    if pos == n_pos && neg == n_neg {
        Ok(out)
    } else {
        Err(Error::GenerationFailed {
            domain: domain.to_string(),
            attempts: cap,
        })
    }
}

/// Number of examples kept labeled for a fraction of `n`.
///
/// `ceil(fraction * n)` with a small guard so that e.g. `0.3 * 100` does not
/// round up to 31.
pub fn labeled_count(fraction: f64, n: usize) -> usize {
    let raw = fraction * n as f64;
    let count = (raw - 1e-9 * raw.max(1.0)).ceil().max(0.0) as usize;
    count.min(n)
}

/// Keeps a class-stratified `ceil(fraction * n)` of a fully labeled domain
/// and moves the rest, with their labels as oracle answers, to the unlabeled
/// pool. Both pools keep the original relative order.
pub fn split_labeled_fraction(
    domain: &DomainDataset,
    fraction: f64,
    seed: u64,
) -> Result<DomainDataset> {
    if !(0.0..=1.0).contains(&fraction) || fraction.is_nan() {
        return Err(Error::InvalidFraction(fraction));
    }
    if !domain.unlabeled.is_empty() {
        return Err(Error::NotFullyLabeled(domain.name.clone()));
    }
    let n = domain.labeled.len();
    let total = labeled_count(fraction, n);
    let (n_pos, n_neg) = domain.class_counts();
    let mut rng = rng::stream(seed, streams::SPLIT);

    // Largest-remainder apportionment of `total` across the two classes.
    let share = |count: usize| count as f64 * total as f64 / n.max(1) as f64;
    let (s_pos, s_neg) = (share(n_pos), share(n_neg));
    let mut q_pos = s_pos.floor() as usize;
    let mut q_neg = s_neg.floor() as usize;
    while q_pos + q_neg < total {
        let r_pos = if q_pos < n_pos {
            s_pos - q_pos as f64
        } else {
            f64::NEG_INFINITY
        };
        let r_neg = if q_neg < n_neg {
            s_neg - q_neg as f64
        } else {
            f64::NEG_INFINITY
        };
        let pick_pos = if (r_pos - r_neg).abs() < 1e-12 {
            rng.gen_bool(0.5)
        } else {
            r_pos > r_neg
        };
        if pick_pos {
            q_pos += 1;
        } else {
            q_neg += 1;
        }
    }

    let mut keep = vec![false; n];
    for (class, quota) in [(Label::Positive, q_pos), (Label::Negative, q_neg)] {
        let mut idx: Vec<usize> = (0..n).filter(|&i| domain.labeled[i].y == class).collect();
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(quota) {
            keep[i] = true;
        }
    }

    let mut labeled = Vec::with_capacity(total);
    let mut unlabeled = Vec::with_capacity(n - total);
    let mut hidden = Vec::with_capacity(n - total);
    for (example, kept) in domain.labeled.iter().zip(keep) {
        if kept {
            labeled.push(example.clone());
        } else {
            unlabeled.push(example.x.clone());
            hidden.push(example.y);
        }
    }
    Ok(DomainDataset {
        name: domain.name.clone(),
        labeled,
        unlabeled,
        hidden_labels: Some(hidden),
    })
}

/// Reads `label,f1,...,fd` rows. An empty label marks an unlabeled row.
pub fn load_dense_csv(path: impl AsRef<Path>, has_header: bool) -> Result<DomainDataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let parse_err = |row: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        message,
    };

    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    let mut dim = None;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| parse_err(row, e.to_string()))?;
        if record.len() < 2 {
            return Err(parse_err(
                row,
                "expected a label and at least one feature".into(),
            ));
        }
        let d = record.len() - 1;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(parse_err(
                    row,
                    format!("expected {expected} features, found {d}"),
                ));
            }
            _ => {}
        }
        let label = match &record[0] {
            "" => None,
            "+1" | "1" | "1.0" | "+1.0" => Some(Label::Positive),
            "-1" | "-1.0" => Some(Label::Negative),
            other => return Err(parse_err(row, format!("unknown label `{other}`"))),
        };
        let x = record
            .iter()
            .skip(1)
            .enumerate()
            .map(|(j, field)| {
                field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        parse_err(
                            row,
                            format!("feature {} is not a finite number: `{field}`", j + 1),
                        )
                    })
            })
            .collect::<Result<FeatureVector>>()?;
        match label {
            Some(y) => labeled.push(LabeledExample::new(x, y)),
            None => unlabeled.push(x),
        }
    }
    if dim.is_none() {
        return Err(Error::NoRows {
            path: path.to_path_buf(),
        });
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    DomainDataset::new(name, labeled, unlabeled, None)
}

/// Writes a dataset in the format read by [`load_dense_csv`]. Oracle labels
/// are written as labels when `include_hidden` is set; otherwise unlabeled
/// rows get an empty label field.
pub fn write_dense_csv<W: Write>(
    domain: &DomainDataset,
    mut out: W,
    include_hidden: bool,
) -> Result<()> {
    let write_row = |out: &mut W, label: &str, x: &[f64]| -> std::io::Result<()> {
        write!(out, "{label}")?;
        for v in x {
            write!(out, ",{v}")?;
        }
        writeln!(out)
    };
    for e in &domain.labeled {
        write_row(&mut out, e.y.token(), &e.x)?;
    }
    for (i, x) in domain.unlabeled.iter().enumerate() {
        let label = match (&domain.hidden_labels, include_hidden) {
            (Some(h), true) => h[i].token(),
            _ => "",
        };
        write_row(&mut out, label, x)?;
    }
    Ok(())
}
