//! Sample moments, delete-one jackknife and weighted line fits.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{domain, Result};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Mean and its standard error.
pub fn mean_se(x: &[f64]) -> (f64, f64) {
    (mean(x), (variance(x) / x.len() as f64).sqrt())
}

/// Sample variance with its delete-one jackknife standard error.
pub fn variance_jackknife(x: &[f64]) -> Result<(f64, f64)> {
    let m = x.len();
    if m < 3 {
        return domain("jackknife variance needs at least three samples");
    }
    let mf = m as f64;
    // Centering first keeps the leave-one-out updates well conditioned.
    let c = mean(x);
    let y: Vec<f64> = x.iter().map(|v| v - c).collect();
    let s1: f64 = y.iter().sum();
    let s2: f64 = y.iter().map(|v| v * v).sum();
    let full = (s2 - s1 * s1 / mf) / (mf - 1.0);
    let loo: Vec<f64> = y
        .iter()
        .map(|v| {
            let a = s1 - v;
            (s2 - v * v - a * a / (mf - 1.0)) / (mf - 2.0)
        })
        .collect();
    let lm = mean(&loo);
    let se = ((mf - 1.0) / mf * loo.iter().map(|v| (v - lm).powi(2)).sum::<f64>()).sqrt();
    Ok((full, se))
}

/// Two-sided `1 - level` quantile of Student's t.
pub fn t_quantile(level: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom").inverse_cdf(1.0 - level / 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    /// 95% interval for the slope.
    pub ci: (f64, f64),
    pub points: usize,
}

impl LineFit {
    pub fn ci_contains(&self, v: f64) -> bool {
        self.ci.0 <= v && v <= self.ci.1
    }
}

/// Weighted least squares of `y` on `x`. With `weights = None` the residual
/// scatter sets the scale; otherwise weights are inverse variances and the
/// scale is never taken below the one they imply.
pub fn weighted_line(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<LineFit> {
    let n = x.len();
    if n < 3 || y.len() != n || weights.is_some_and(|w| w.len() != n) {
        return domain("line fit needs at least three matching points");
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return domain("line fit inputs must be finite");
    }
    let w: Vec<f64> = match weights {
        Some(w) => {
            if w.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return domain("weights must be positive and finite");
            }
            w.to_vec()
        }
        None => vec![1.0; n],
    };
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(&w).map(|(a, b)| b * (a - xm).powi(2)).sum();
    if !(sxx > 0.0) {
        return domain("line fit needs at least two distinct abscissae");
    }
    let sxy: f64 = x.iter().zip(y).zip(&w).map(|((a, c), b)| b * (a - xm) * (c - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let df = (n - 2) as f64;
    let rss: f64 = x
        .iter()
        .zip(y)
        .zip(&w)
        .map(|((a, c), b)| b * (c - intercept - slope * a).powi(2))
        .sum();
    let mut s2 = rss / df;
    if weights.is_some() {
        s2 = s2.max(1.0);
    }
    let slope_se = (s2 / sxx).sqrt();
    let q = t_quantile(0.05, df);
    Ok(LineFit { slope, intercept, slope_se, ci: (slope - q * slope_se, slope + q * slope_se), points: n })
}
