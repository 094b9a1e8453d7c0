//! Deterministic summation and the small set of estimators used by the drivers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neumaier-compensated sum. The result does not depend on thread count.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in iter {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

pub fn mean_stderr(samples: &[f64]) -> MeanStderr {
    let n = samples.len();
    if n == 0 {
        return MeanStderr { mean: f64::NAN, stderr: f64::NAN, n };
    }
    let mean = neumaier_sum(samples.iter().copied()) / n as f64;
    if n == 1 {
        return MeanStderr { mean, stderr: 0.0, n };
    }
    let var = neumaier_sum(samples.iter().map(|x| (x - mean) * (x - mean))) / (n - 1) as f64;
    MeanStderr { mean, stderr: (var / n as f64).sqrt(), n }
}

/// Result of a weighted straight-line fit `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
}

/// Weighted least squares with weights `w_i = 1/σ_i²`. Passing `None` for the
/// errors gives an unweighted fit whose slope error uses the residual variance.
pub fn linear_fit(x: &[f64], y: &[f64], sigma: Option<&[f64]>) -> Result<LineFit> {
    let n = x.len();
    if n != y.len() || sigma.is_some_and(|s| s.len() != n) {
        return Err(Error::InvalidParameter("fit inputs have different lengths".into()));
    }
    if n < 2 {
        return Err(Error::InsufficientPoints { needed: 2, found: n });
    }
    let w: Vec<f64> = match sigma {
        Some(s) => s.iter().map(|v| if *v > 0.0 { 1.0 / (v * v) } else { 1.0 }).collect(),
        None => vec![1.0; n],
    };
    let sw = neumaier_sum(w.iter().copied());
    let xm = neumaier_sum(w.iter().zip(x).map(|(w, x)| w * x)) / sw;
    let ym = neumaier_sum(w.iter().zip(y).map(|(w, y)| w * y)) / sw;
    let sxx = neumaier_sum((0..n).map(|i| w[i] * (x[i] - xm).powi(2)));
    let sxy = neumaier_sum((0..n).map(|i| w[i] * (x[i] - xm) * (y[i] - ym)));
    let syy = neumaier_sum((0..n).map(|i| w[i] * (y[i] - ym).powi(2)));
    if sxx <= 0.0 {
        return Err(Error::InvalidParameter("fit abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss = neumaier_sum((0..n).map(|i| w[i] * (y[i] - intercept - slope * x[i]).powi(2)));
    let slope_stderr = match sigma {
        Some(_) => (1.0 / sxx).sqrt(),
        None if n > 2 => (rss / (n - 2) as f64 / sxx).sqrt(),
        None => 0.0,
    };
    let r_squared = if syy > 0.0 { 1.0 - rss / syy } else { 1.0 };
    Ok(LineFit { slope, intercept, slope_stderr, r_squared })
}

/// Delete-one jackknife of a statistic over `n` groups. `stat(skip)` must
/// evaluate the statistic with group `skip` removed, or on all groups for `None`.
pub fn jackknife<F>(n: usize, stat: F) -> MeanStderr
where
    F: Fn(Option<usize>) -> f64,
{
    let full = stat(None);
    if n < 2 {
        return MeanStderr { mean: full, stderr: f64::NAN, n };
    }
    let loo: Vec<f64> = (0..n).map(|i| stat(Some(i))).collect();
    let m = neumaier_sum(loo.iter().copied()) / n as f64;
    let var = neumaier_sum(loo.iter().map(|v| (v - m).powi(2))) * (n - 1) as f64 / n as f64;
    MeanStderr { mean: full, stderr: var.sqrt(), n }
}

/// `(2k−1)!!` as a float.
pub fn double_factorial_odd(k: usize) -> f64 {
    (1..=k).map(|j| (2 * j - 1) as f64).product()
}
