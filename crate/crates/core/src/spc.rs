//! Statistical-process-control weights for the regularization terms.
//!
//! Each observation gets an absolute Z-value against a local individuals
//! chart (window mean and average moving range), which is turned into a
//! two-sided p-value and then into a weight in `[0, 1]`. Points that look
//! out of control get small weights so the regularization does not smooth
//! them away.

use serde::{Deserialize, Serialize};

use crate::error::{config, invalid, Result};
use crate::series::TimeSeries;
use crate::stats::{normal_two_sided_p, P_FLOOR};

/// Converts an average moving range into a standard-deviation estimate.
pub const D2: f64 = 1.128;

/// Which window(s) a Z-value is computed against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZMode {
    /// Only the `n` points before `t`.
    Preceding,
    /// The larger of the preceding and succeeding Z-values.
    MaxOfBoth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// `w = 1`.
    None,
    /// `w = p`.
    Linear,
    /// `w = 1 - exp(-k p^m)`.
    Transformed { k: f64, m: f64 },
    /// `w = 0` when `p <= p*`, else 1.
    Binary,
}

impl WeightScheme {
    pub fn validate(&self) -> Result<()> {
        if let WeightScheme::Transformed { k, m } = *self {
            if !(k.is_finite() && k > 0.0 && m.is_finite() && m > 0.0) {
                return config(format!("transformed weights need k > 0 and m > 0, got k={k}, m={m}"));
            }
        }
        Ok(())
    }
}

/// Absolute Z-values; `None` where no window is available.
#[derive(Debug, Clone, PartialEq)]
pub struct ZSeries {
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSeries {
    pub values: Vec<f64>,
}

impl WeightSeries {
    pub fn ones(len: usize) -> Self {
        Self { values: vec![1.0; len] }
    }
}

fn z_from(x_t: f64, window_mean: f64, mean_mr: f64) -> f64 {
    let dev = (x_t - window_mean).abs();
    if mean_mr > 0.0 {
        D2 * dev / mean_mr
    } else if dev == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Z-value of `x[t]` against `x[lo..hi]`, using the moving ranges inside that window.
fn z_against(x: &[f64], t: usize, lo: usize, hi: usize) -> f64 {
    let n = (hi - lo) as f64;
    let window_mean = x[lo..hi].iter().sum::<f64>() / n;
    let ranges: f64 = x[lo..hi].windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    let mean_mr = ranges / (hi - lo - 1) as f64;
    z_from(x[t], window_mean, mean_mr)
}

/// Local individuals-chart Z-values with window length `n`.
///
/// The preceding window of `t` is `x[t-n..t]`; the succeeding window is
/// `x[t+1..=t+n]`. The average moving range uses the `n - 1` ranges
/// between consecutive points of the same window.
pub fn z_values(x: &TimeSeries, n: usize, mode: ZMode) -> Result<ZSeries> {
    let x = x.values();
    let len = x.len();
    if n < 2 {
        return invalid(format!("SPC window must be at least 2, got {n}"));
    }
    if len < n + 2 {
        return invalid(format!("SPC window {n} needs at least {} observations, got {len}", n + 2));
    }
    let values = (0..len)
        .map(|t| {
            let before = (t >= n).then(|| z_against(x, t, t - n, t));
            let after = match mode {
                ZMode::Preceding => None,
                ZMode::MaxOfBoth => (t + n < len).then(|| z_against(x, t, t + 1, t + n + 1)),
            };
            match (before, after) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            }
        })
        .collect();
    Ok(ZSeries { values })
}

/// Two-sided p-values; undefined Z maps to 1.
pub fn p_values(z: &ZSeries) -> Vec<f64> {
    z.values
        .iter()
        .map(|z| z.map_or(1.0, normal_two_sided_p))
        .collect()
}

/// Regularization weights from p-values.
pub fn weights(p: &[f64], scheme: WeightScheme, p_cutoff: f64) -> Result<WeightSeries> {
    scheme.validate()?;
    if matches!(scheme, WeightScheme::Binary) && !(p_cutoff > 0.0 && p_cutoff < 1.0) {
        return config(format!("p_cutoff must lie in (0, 1), got {p_cutoff}"));
    }
    if let Some(bad) = p.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return invalid(format!("p-value {bad} outside (0, 1]"));
    }
    let values = p
        .iter()
        .map(|&p| {
            let p = p.max(P_FLOOR);
            match scheme {
                WeightScheme::None => 1.0,
                WeightScheme::Linear => p,
                WeightScheme::Transformed { k, m } => -(-k * p.powf(m)).exp_m1(),
                WeightScheme::Binary => {
                    if p <= p_cutoff {
                        0.0
                    } else {
                        1.0
                    }
                }
            }
        })
        .collect();
    Ok(WeightSeries { values })
}

/// Per-point chart output.
#[derive(Debug, Clone, PartialEq)]
pub struct SpcChart {
    pub z: ZSeries,
    pub p: Vec<f64>,
    pub w: WeightSeries,
}

/// Z, p and w in one pass.
pub fn chart(
    x: &TimeSeries,
    n: usize,
    mode: ZMode,
    scheme: WeightScheme,
    p_cutoff: f64,
) -> Result<SpcChart> {
    let z = z_values(x, n, mode)?;
    let p = p_values(&z);
    let w = weights(&p, scheme, p_cutoff)?;
    Ok(SpcChart { z, p, w })
}
