//! Gaussian kernel, maximum mean discrepancy and kernel mean matching.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::FeatureVector;
use crate::error::{Error, Result};

/// Gaussian kernel `k(x, y) = exp(-||x - y||^2 / bandwidth)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// In squared-distance units.
    pub bandwidth: f64,
}

impl KernelConfig {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "kernel bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(Self { bandwidth })
    }

    #[inline]
    pub(crate) fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        (-squared_distance(x, y) / self.bandwidth).exp()
    }
}

#[inline]
pub fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn check_dims(points: &[FeatureVector], dim: usize) -> Result<()> {
    match points.iter().find(|p| p.len() != dim) {
        Some(p) => Err(Error::DimensionMismatch {
            expected: dim,
            found: p.len(),
        }),
        None => Ok(()),
    }
}

/// Median heuristic: the median of all pairwise squared distances.
///
/// A zero median (mostly duplicated points) falls back to the smallest
/// positive squared distance.
pub fn median_bandwidth(points: &[FeatureVector]) -> Result<KernelConfig> {
    if points.len() < 2 {
        return Err(Error::EmptyInput(
            "median bandwidth needs at least two points",
        ));
    }
    check_dims(points, points[0].len())?;
    let n = points.len();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push(squared_distance(&points[i], &points[j]));
        }
    }
    let m = dists.len();
    let (_, &mut upper, _) = dists.select_nth_unstable_by(m / 2, f64::total_cmp);
    let median = if m % 2 == 1 {
        upper
    } else {
        let lower = dists[..m / 2]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    if median > 0.0 {
        return KernelConfig::new(median);
    }
    dists
        .iter()
        .copied()
        .filter(|d| *d > 0.0)
        .min_by(f64::total_cmp)
        .ok_or(Error::DegenerateBandwidth)
        .and_then(KernelConfig::new)
}

pub fn gaussian_kernel(x: &[f64], y: &[f64], cfg: &KernelConfig) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    Ok(cfg.eval(x, y))
}

/// Squared MMD between two samples (biased estimator, diagonal included).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct MmdValue(pub f64);

impl MmdValue {
    pub fn value(self) -> f64 {
        self.0
    }
}

fn mean_cross_kernel(a: &[FeatureVector], b: &[FeatureVector], cfg: &KernelConfig) -> f64 {
    let mut total = 0.0;
    for x in a {
        for y in b {
            total += cfg.eval(x, y);
        }
    }
    total / (a.len() * b.len()) as f64
}

pub fn compute_mmd(
    a: &[FeatureVector],
    b: &[FeatureVector],
    cfg: &KernelConfig,
) -> Result<MmdValue> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("MMD needs two non-empty samples"));
    }
    let dim = a[0].len();
    check_dims(a, dim)?;
    check_dims(b, dim)?;
    // all three terms share one summation order, so mmd(a, a) is exactly 0
    let value = mean_cross_kernel(a, a, cfg) + mean_cross_kernel(b, b, cfg)
        - 2.0 * mean_cross_kernel(a, b, cfg);
    Ok(MmdValue(value.max(0.0)))
}

/// Dense row-major kernel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl KernelMatrix {
    pub fn gram(points: &[FeatureVector], cfg: &KernelConfig) -> Self {
        let n = points.len();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
            for j in i + 1..n {
                let v = cfg.eval(&points[i], &points[j]);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Self { n, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    fn mul_vec(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).iter().zip(v).map(|(k, x)| k * x).sum();
        }
    }
}

fn default_upper_bound() -> f64 {
    1000.0
}
fn default_max_iters() -> usize {
    5000
}
fn default_kmm_tol() -> f64 {
    1e-7
}

/// Settings for [`solve_kmm`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KmmConfig {
    /// Per-instance weight cap.
    #[serde(default = "default_upper_bound")]
    pub upper_bound: f64,
    /// Mean-weight tolerance; `None` means `(sqrt(n) - 1) / sqrt(n)`.
    #[serde(default)]
    pub slack: Option<f64>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Projected-gradient norm at which the solver stops.
    #[serde(default = "default_kmm_tol")]
    pub tol: f64,
}

impl Default for KmmConfig {
    fn default() -> Self {
        Self {
            upper_bound: default_upper_bound(),
            slack: None,
            max_iters: default_max_iters(),
            tol: default_kmm_tol(),
        }
    }
}

impl KmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.upper_bound.is_finite() && self.upper_bound >= 1.0) {
            return Err(Error::InvalidConfig("KMM upper bound must be >= 1".into()));
        }
        if let Some(s) = self.slack {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::InvalidConfig("KMM slack must be >= 0".into()));
            }
        }
        if self.max_iters == 0 || !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::InvalidConfig(
                "KMM max_iters and tol must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn slack_for(&self, n: usize) -> f64 {
        self.slack.unwrap_or_else(|| {
            let r = (n as f64).sqrt();
            (r - 1.0) / r
        })
    }
}

/// Matching weights for one source against the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmmSolution {
    /// One weight per aggregate source point (labeled first, then unlabeled).
    pub alpha: Vec<f64>,
    /// `0.5 a'Ka / n^2 - k'a / (n n_T)` at the returned weights.
    pub objective: f64,
    /// Squared MMD between the re-weighted source and the target.
    pub weighted_mmd: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl KmmSolution {
    pub fn mean_alpha(&self) -> f64 {
        self.alpha.iter().sum::<f64>() / self.alpha.len() as f64
    }

    /// Writes `index,alpha,pool` rows; the first `n_labeled` weights belong
    /// to the labeled pool.
    pub fn write_csv<W: Write>(&self, mut out: W, n_labeled: usize) -> Result<()> {
        writeln!(out, "index,alpha,pool")?;
        for (i, a) in self.alpha.iter().enumerate() {
            let pool = if i < n_labeled {
                "labeled"
            } else {
                "unlabeled"
            };
            writeln!(out, "{i},{a:.9},{pool}")?;
        }
        Ok(())
    }
}

/// Euclidean projection onto `{0 <= a_i <= upper, lo <= sum(a) <= hi}`.
///
/// The solution is `clip(v - lambda, 0, upper)` with `lambda` found by
/// bisection on the monotone sum.
pub(crate) fn project_box_sum(v: &[f64], upper: f64, lo: f64, hi: f64) -> Vec<f64> {
    let clipped_sum = |shift: f64| -> f64 { v.iter().map(|x| (x - shift).clamp(0.0, upper)).sum() };
    let s0 = clipped_sum(0.0);
    let target = if s0 > hi {
        hi
    } else if s0 < lo {
        lo
    } else {
        return v.iter().map(|x| x.clamp(0.0, upper)).collect();
    };
    let vmax = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let vmin = v.iter().copied().fold(f64::INFINITY, f64::min);
    // sum(shift = a) = n * upper >= target, sum(shift = b) = 0 <= target
    let (mut a, mut b) = (vmin - upper, vmax);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if clipped_sum(mid) > target {
            a = mid;
        } else {
            b = mid;
        }
    }
    let shift = 0.5 * (a + b);
    v.iter().map(|x| (x - shift).clamp(0.0, upper)).collect()
}

struct KmmProblem {
    k: KernelMatrix,
    kappa: Vec<f64>,
    n: usize,
    n_target: usize,
    target_term: f64,
}

impl KmmProblem {
    fn new(source: &[FeatureVector], target: &[FeatureVector], cfg: &KernelConfig) -> Self {
        let k = KernelMatrix::gram(source, cfg);
        let kappa = source
            .iter()
            .map(|x| target.iter().map(|t| cfg.eval(x, t)).sum())
            .collect();
        Self {
            k,
            kappa,
            n: source.len(),
            n_target: target.len(),
            target_term: mean_cross_kernel(target, target, cfg),
        }
    }

    /// Objective and gradient at `alpha`; `ka` receives `K alpha`.
    fn evaluate(&self, alpha: &[f64], ka: &mut [f64], grad: &mut [f64]) -> f64 {
        let n2 = (self.n * self.n) as f64;
        let cross = (self.n * self.n_target) as f64;
        self.k.mul_vec(alpha, ka);
        let mut quad = 0.0;
        let mut lin = 0.0;
        for i in 0..self.n {
            quad += alpha[i] * ka[i];
            lin += self.kappa[i] * alpha[i];
            grad[i] = ka[i] / n2 - self.kappa[i] / cross;
        }
        0.5 * quad / n2 - lin / cross
    }
}

/// Minimizes the squared MMD between the `alpha`-weighted source and the
/// target by projected gradient with fixed step `1/L`, where `L` is the
/// Gershgorin bound on the Hessian `K / n^2`. Starts from all-ones.
///
/// Non-convergence within `max_iters` is not an error; it is reported through
/// `converged` and `kkt_residual`.
pub fn solve_kmm(
    source: &[FeatureVector],
    target: &[FeatureVector],
    kernel: &KernelConfig,
    cfg: &KmmConfig,
) -> Result<KmmSolution> {
    solve_kmm_inner(source, target, kernel, cfg, None)
}

/// Same as [`solve_kmm`], also returning the objective after every iteration
/// (the first entry is the objective at the starting point).
pub fn solve_kmm_traced(
    source: &[FeatureVector],
    target: &[FeatureVector],
    kernel: &KernelConfig,
    cfg: &KmmConfig,
) -> Result<(KmmSolution, Vec<f64>)> {
    let mut trace = Vec::new();
    let sol = solve_kmm_inner(source, target, kernel, cfg, Some(&mut trace))?;
    Ok((sol, trace))
}

fn solve_kmm_inner(
    source: &[FeatureVector],
    target: &[FeatureVector],
    kernel: &KernelConfig,
    cfg: &KmmConfig,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<KmmSolution> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput("KMM needs non-empty source and target"));
    }
    cfg.validate()?;
    let dim = source[0].len();
    check_dims(source, dim)?;
    check_dims(target, dim)?;

    let problem = KmmProblem::new(source, target, kernel);
    let n = problem.n;
    let nf = n as f64;
    let eps = cfg.slack_for(n);
    let (lo, hi) = (nf * (1.0 - eps).max(0.0), nf * (1.0 + eps));
    let lipschitz = (0..n)
        .map(|i| problem.k.row(i).iter().sum::<f64>())
        .fold(0.0, f64::max)
        / (nf * nf);
    let step = 1.0 / lipschitz;

    let mut alpha = project_box_sum(&vec![1.0; n], cfg.upper_bound, lo, hi);
    let mut ka = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut objective = problem.evaluate(&alpha, &mut ka, &mut grad);
    if let Some(t) = trace.as_deref_mut() {
        t.push(objective);
    }

    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        let trial: Vec<f64> = alpha.iter().zip(&grad).map(|(a, g)| a - step * g).collect();
        let next = project_box_sum(&trial, cfg.upper_bound, lo, hi);
        residual = alpha
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
            / step;
        if residual <= cfg.tol {
            converged = true;
            break;
        }
        let next_objective = problem.evaluate(&next, &mut ka, &mut grad);
        debug_assert!(
            next_objective <= objective + 1e-12 * objective.abs().max(1.0),
            "KMM objective increased: {objective} -> {next_objective}"
        );
        alpha = next;
        objective = next_objective;
        iterations += 1;
        if let Some(t) = trace.as_deref_mut() {
            t.push(objective);
        }
    }
    if !converged {
        log::debug!("KMM stopped after {iterations} iterations, residual {residual:.3e}");
    }

    let weighted_mmd = (2.0 * objective + problem.target_term).max(0.0);
    Ok(KmmSolution {
        alpha,
        objective,
        weighted_mmd,
        kkt_residual: residual,
        iterations,
        converged,
    })
}

/// Evaluates the KMM objective at arbitrary weights. Used by audits and
/// independent checks of the solver.
pub fn kmm_objective(
    source: &[FeatureVector],
    target: &[FeatureVector],
    kernel: &KernelConfig,
    alpha: &[f64],
) -> f64 {
    let problem = KmmProblem::new(source, target, kernel);
    let mut ka = vec![0.0; problem.n];
    let mut grad = vec![0.0; problem.n];
    problem.evaluate(alpha, &mut ka, &mut grad)
}
