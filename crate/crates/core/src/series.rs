//! Shared series types and difference operators.
//!
//! Time is an implicit 0-based index internally. Anything user-facing
//! (CSV rows, reports) converts to 1-based indices.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Minimum length of an observed series: second differences must exist.
pub const MIN_SERIES_LEN: usize = 3;

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return invalid(format!("{what}: non-finite value {v} at t={}", i + 1));
    }
    Ok(())
}

/// An observed, uniformly spaced series of finite values with at least three points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeSeries {
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < MIN_SERIES_LEN {
            return invalid(format!(
                "series has {} observations, at least {MIN_SERIES_LEN} required",
                values.len()
            ));
        }
        check_finite(&values, "series")?;
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }
}

impl AsRef<[f64]> for TimeSeries {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// The pair of mean and dispersion signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSignal {
    mean: Vec<f64>,
    dispersion: Vec<f64>,
}

impl DualSignal {
    pub fn new(mean: Vec<f64>, dispersion: Vec<f64>) -> Result<Self> {
        if mean.len() != dispersion.len() {
            return invalid(format!(
                "mean has {} points but dispersion has {}",
                mean.len(),
                dispersion.len()
            ));
        }
        check_finite(&mean, "mean signal")?;
        check_finite(&dispersion, "dispersion signal")?;
        if let Some((i, s)) = dispersion.iter().enumerate().find(|(_, s)| **s < 0.0) {
            return invalid(format!("dispersion {s} is negative at t={}", i + 1));
        }
        Ok(Self { mean, dispersion })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn dispersion(&self) -> &[f64] {
        &self.dispersion
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Isolated noise, `(x - m) / s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSeries {
    values: Vec<f64>,
}

impl NoiseSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values, "noise")?;
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `x[i+1] - x[i]`.
pub fn first_diff(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return invalid(format!("first difference needs 2 points, got {}", x.len()));
    }
    Ok(x.windows(2).map(|w| w[1] - w[0]).collect())
}

/// `x[i+2] - 2 x[i+1] + x[i]`.
pub fn second_diff(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 3 {
        return invalid(format!("second difference needs 3 points, got {}", x.len()));
    }
    Ok(x.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).collect())
}

/// `|x[i+1] - x[i]|`.
pub fn moving_range(x: &[f64]) -> Result<Vec<f64>> {
    Ok(first_diff(x)?.into_iter().map(f64::abs).collect())
}
