//! Independent reference computations. Nothing here calls the solver code
//! under test except to read its inputs.

use mstl_core::data::FeatureVector;

/// Quadratic form of the matching problem: `0.5 a'Qa - c'a` with
/// `Q = K / n^2` and `c_i = sum_j k(x_i, t_j) / (n n_T)`.
pub struct MatchingQp {
    pub q: Vec<Vec<f64>>,
    pub c: Vec<f64>,
}

fn rbf(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    let d: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d / gamma).exp()
}

impl MatchingQp {
    pub fn new(source: &[FeatureVector], target: &[FeatureVector], gamma: f64) -> Self {
        let n = source.len() as f64;
        let nt = target.len() as f64;
        let q = source
            .iter()
            .map(|xi| {
                source
                    .iter()
                    .map(|xj| rbf(xi, xj, gamma) / (n * n))
                    .collect()
            })
            .collect();
        let c = source
            .iter()
            .map(|xi| target.iter().map(|t| rbf(xi, t, gamma)).sum::<f64>() / (n * nt))
            .collect();
        Self { q, c }
    }

    pub fn objective(&self, a: &[f64]) -> f64 {
        let mut quad = 0.0;
        for (i, row) in self.q.iter().enumerate() {
            for (j, q) in row.iter().enumerate() {
                quad += a[i] * q * a[j];
            }
        }
        0.5 * quad - self.c.iter().zip(a).map(|(c, x)| c * x).sum::<f64>()
    }
}

/// Smallest objective over the grid `{0, step, 2 step, ..} ^ n` inside the
/// box `[0, upper]^n` and the slab `|sum a - n| <= n eps`.
///
/// The first `n - 1` coordinates are enumerated; along the last one the
/// objective is a convex parabola, so the best grid value in the feasible
/// interval sits at one of the two grid points around the clipped vertex.
pub fn grid_minimum(qp: &MatchingQp, upper: f64, eps: f64, step: f64) -> f64 {
    let n = qp.c.len();
    let levels = (upper / step).round() as usize;
    let lo_sum = n as f64 * (1.0 - eps);
    let hi_sum = n as f64 * (1.0 + eps);
    let mut best = f64::INFINITY;
    let mut idx = vec![0usize; n - 1];
    let mut a = vec![0.0; n];
    loop {
        for (i, &k) in idx.iter().enumerate() {
            a[i] = k as f64 * step;
        }
        let partial: f64 = a[..n - 1].iter().sum();
        let lo = (lo_sum - partial).max(0.0);
        let hi = (hi_sum - partial).min(upper);
        if lo <= hi + 1e-12 {
            let last = n - 1;
            let linear: f64 = (0..last).map(|j| qp.q[last][j] * a[j]).sum::<f64>() - qp.c[last];
            let vertex = (-linear / qp.q[last][last]).clamp(lo, hi);
            let first = (lo / step - 1e-9).ceil() as i64;
            let end = (hi / step + 1e-9).floor() as i64;
            let near = (vertex / step).floor() as i64;
            for g in [near - 1, near, near + 1, near + 2, first, end] {
                if g < first || g > end {
                    continue;
                }
                a[last] = g as f64 * step;
                best = best.min(qp.objective(&a));
            }
        }
        // next grid point of the leading coordinates
        let mut pos = 0;
        loop {
            if pos == n - 1 {
                return best;
            }
            idx[pos] += 1;
            if idx[pos] <= levels {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(m: &[Vec<f64>]) -> Vec<f64> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &o in &order[i..=j] {
            r[o] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx * vy).sqrt()
}
