//! Fitting metrics, weighted regularization and smoothing terms, and the
//! composed mean, dispersion and joint losses.
//!
//! Everything here uses exact absolute values. The optimizer works on a
//! smoothed surrogate of the same terms (see [`crate::optimizer`]) and
//! reports its results through these functions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::params::Hyperparameters;
use crate::series::{first_diff, second_diff};
use crate::spc::WeightSeries;
use crate::stats::{mean, pearson, std_pop};

/// Fitting metric between a series and its signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    Rmse,
    Mse,
    Mae,
    Sse,
    Maxse,
    Maxae,
}

impl FitKind {
    pub const ALL: [FitKind; 6] = [
        FitKind::Rmse,
        FitKind::Mse,
        FitKind::Mae,
        FitKind::Sse,
        FitKind::Maxse,
        FitKind::Maxae,
    ];

    fn table_index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for FitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FitKind::Rmse => "RMSE",
            FitKind::Mse => "MSE",
            FitKind::Mae => "MAE",
            FitKind::Sse => "SSE",
            FitKind::Maxse => "MAXSE",
            FitKind::Maxae => "MAXAE",
        };
        f.write_str(s)
    }
}

/// First-difference penalty form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    /// Mean weighted moving range (L1).
    Mae,
    /// Root mean squared weighted moving range (L2).
    Rmse,
}

impl RegKind {
    pub fn as_metric(self) -> FitKind {
        match self {
            RegKind::Mae => FitKind::Mae,
            RegKind::Rmse => FitKind::Rmse,
        }
    }
}

/// Terms of one composed loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub fitting: f64,
    pub regularization: f64,
    pub smoothing: f64,
    pub beta: f64,
    pub gamma: f64,
    pub total: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Mean and dispersion losses combined with the balance multiplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointLoss {
    pub mean: LossBreakdown,
    pub disp: LossBreakdown,
    pub theta: f64,
    pub combined: f64,
}

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return invalid(format!("{what}: length mismatch {a} vs {b}"));
    }
    Ok(())
}

pub fn fitting_metric(x: &[f64], m: &[f64], kind: FitKind) -> Result<f64> {
    check_len(x.len(), m.len(), "fitting metric")?;
    if x.is_empty() {
        return invalid("fitting metric of an empty series");
    }
    let n = x.len() as f64;
    let sq = || x.iter().zip(m).map(|(a, b)| (a - b) * (a - b));
    let ab = || x.iter().zip(m).map(|(a, b)| (a - b).abs());
    Ok(match kind {
        FitKind::Rmse => (sq().sum::<f64>() / n).sqrt(),
        FitKind::Mse => sq().sum::<f64>() / n,
        FitKind::Mae => ab().sum::<f64>() / n,
        FitKind::Sse => sq().sum::<f64>(),
        FitKind::Maxse => sq().fold(0.0, f64::max),
        FitKind::Maxae => ab().fold(0.0, f64::max),
    })
}

/// Weighted first-difference penalty; `w[t]` scales the difference ending at `t`.
pub fn regularization(m: &[f64], w: &WeightSeries, kind: RegKind) -> Result<f64> {
    check_len(m.len(), w.values.len(), "regularization")?;
    let d = first_diff(m)?;
    let denom = d.len() as f64;
    let terms = d.iter().zip(&w.values[1..]);
    Ok(match kind {
        RegKind::Mae => terms.map(|(d, w)| w * d.abs()).sum::<f64>() / denom,
        RegKind::Rmse => (terms.map(|(d, w)| w * d * d).sum::<f64>() / denom).sqrt(),
    })
}

/// Weighted mean absolute second difference; `w[t]` scales the term ending at `t`.
pub fn smoothing(m: &[f64], w: &WeightSeries) -> Result<f64> {
    check_len(m.len(), w.values.len(), "smoothing")?;
    let d2 = second_diff(m)?;
    let denom = d2.len() as f64;
    Ok(d2.iter().zip(&w.values[2..]).map(|(d, w)| w * d.abs()).sum::<f64>() / denom)
}

/// Pairwise compatibility of two metrics by order and normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Compatibility {
    pub order_match: bool,
    pub normalization_match: bool,
    pub compatible: bool,
}

// (order, normalization) below the diagonal, rows and columns in FitKind::ALL order
const TABLE: [[(bool, bool); 6]; 6] = {
    const X: (bool, bool) = (true, true);
    [
        [X, X, X, X, X, X],
        [(false, false), X, X, X, X, X],
        [(true, false), (false, true), X, X, X, X],
        [(false, false), (true, false), (false, false), X, X, X],
        [(false, true), (true, true), (false, true), (true, false), X, X],
        [(true, true), (false, true), (true, true), (false, false), (false, true), X],
    ]
};

/// Compatibility lookup; symmetric, and a metric is compatible with itself.
pub fn compatibility(a: FitKind, b: FitKind) -> Compatibility {
    let (i, j) = (a.table_index(), b.table_index());
    let (row, col) = if i >= j { (i, j) } else { (j, i) };
    let (order_match, normalization_match) = TABLE[row][col];
    Compatibility {
        order_match,
        normalization_match,
        compatible: order_match && normalization_match,
    }
}

fn compat_warning(fit: FitKind, reg: RegKind) -> Option<String> {
    let c = compatibility(fit, reg.as_metric());
    (!c.compatible).then(|| {
        format!(
            "fitting {fit} and regularization {} differ in {}",
            reg.as_metric(),
            match (c.order_match, c.normalization_match) {
                (false, false) => "order and normalization",
                (false, true) => "order",
                _ => "normalization",
            }
        )
    })
}

#[allow(clippy::too_many_arguments)]
fn compose(
    target: &[f64],
    signal: &[f64],
    w: &WeightSeries,
    beta: f64,
    gamma: f64,
    fit: FitKind,
    reg: RegKind,
) -> Result<LossBreakdown> {
    check_len(target.len(), signal.len(), "loss")?;
    if signal.len() < 3 {
        return invalid(format!("loss needs at least 3 points, got {}", signal.len()));
    }
    let fitting = fitting_metric(target, signal, fit)?;
    let regularization = regularization(signal, w, reg)?;
    let smoothing = smoothing(signal, w)?;
    Ok(LossBreakdown {
        fitting,
        regularization,
        smoothing,
        beta,
        gamma,
        total: fitting + beta * regularization + gamma * smoothing,
        warnings: compat_warning(fit, reg).into_iter().collect(),
    })
}

/// Mean-signal loss: fitting of `m` to `x` plus weighted first and second difference penalties.
pub fn loss_mean(
    x: &[f64],
    m: &[f64],
    w: &WeightSeries,
    beta: f64,
    gamma: f64,
    fit: FitKind,
    reg: RegKind,
) -> Result<LossBreakdown> {
    compose(x, m, w, beta, gamma, fit, reg)
}

/// Dispersion loss: fitting of `s` to absolute residuals plus the same penalties on `s`.
pub fn loss_disp(
    r_abs: &[f64],
    s: &[f64],
    w: &WeightSeries,
    beta: f64,
    gamma: f64,
    fit: FitKind,
    reg: RegKind,
) -> Result<LossBreakdown> {
    if let Some((i, r)) = r_abs.iter().enumerate().find(|(_, r)| **r < 0.0) {
        return invalid(format!("absolute residual {r} is negative at t={}", i + 1));
    }
    compose(r_abs, s, w, beta, gamma, fit, reg)
}

/// Joint loss `mean + theta * disp`, the dispersion part fitted to `|x - m|`.
///
/// When `h.disp_weighting` is false the dispersion terms use unit weights.
pub fn loss_joint(
    x: &[f64],
    m: &[f64],
    s: &[f64],
    w: &WeightSeries,
    betas: (f64, f64),
    h: &Hyperparameters,
) -> Result<JointLoss> {
    check_len(x.len(), s.len(), "joint loss")?;
    let mean = loss_mean(x, m, w, betas.0, h.gamma_mean, h.fit_kind, h.reg_kind)?;
    let r_abs: Vec<f64> = x.iter().zip(m).map(|(x, m)| (x - m).abs()).collect();
    let ones;
    let w_disp = if h.disp_weighting {
        w
    } else {
        ones = WeightSeries::ones(x.len());
        &ones
    };
    let disp = loss_disp(&r_abs, s, w_disp, betas.1, h.gamma_disp, h.fit_kind, h.reg_kind)?;
    let combined = mean.total + h.theta * disp.total;
    Ok(JointLoss { mean, disp, theta: h.theta, combined })
}

/// Moment form of `MSE(x, m) + beta * mean((dm)^2)` with unit weights:
///
/// `(x̄ - m̄)² - 2 ρ σx σm + (1 + 2 β (1 - r)) σm² + σx²`
///
/// with population standard deviations and `r` the lag-1 autocorrelation of
/// `m`. It differs from the direct loss only by boundary terms of order 1/T.
pub fn mse_loss_moment_form(x: &[f64], m: &[f64], beta: f64) -> Result<f64> {
    check_len(x.len(), m.len(), "moment form")?;
    if x.len() < 3 {
        return invalid("moment form needs at least 3 points");
    }
    let (sx, sm) = (std_pop(x), std_pop(m));
    let rho = pearson(x, m).unwrap_or(0.0);
    let mbar = mean(m);
    let denom: f64 = m.iter().map(|v| (v - mbar).powi(2)).sum();
    let r = if denom > 0.0 {
        m.windows(2).map(|p| (p[0] - mbar) * (p[1] - mbar)).sum::<f64>() / denom
    } else {
        0.0
    };
    Ok((mean(x) - mbar).powi(2) - 2.0 * rho * sx * sm + (1.0 + 2.0 * beta * (1.0 - r)) * sm * sm + sx * sx)
}
