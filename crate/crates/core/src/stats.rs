//! Summary statistics and the paired t-test.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Reported instead of zero when differences are constant and non-zero.
pub const P_VALUE_FLOOR: f64 = 1e-12;

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (`n - 1` denominator); 0 for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Two-tailed paired t-test p-value for `a` vs `b`.
///
/// All-zero differences give 1. Constant non-zero differences have zero
/// variance and give [`P_VALUE_FLOOR`].
pub fn paired_significance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            what: "paired samples",
            left: a.len(),
            right: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidConfig(
            "paired test needs at least two pairs".into(),
        ));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&diffs);
    let sd = std_dev(&diffs);
    let scale = diffs.iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
    if scale == 0.0 {
        return Ok(1.0);
    }
    if sd <= 1e-12 * scale {
        return Ok(if m.abs() <= 1e-12 * scale {
            1.0
        } else {
            P_VALUE_FLOOR
        });
    }
    let t = m / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(p.clamp(P_VALUE_FLOOR, 1.0))
}
