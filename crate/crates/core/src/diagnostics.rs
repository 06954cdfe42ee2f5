//! Noise isolation and stationarity / whiteness diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{degenerate, invalid, Result};
use crate::series::{DualSignal, NoiseSeries, TimeSeries};
use crate::stats::{chi2_sf, mean, pearson, std_sample, variance_pop};

/// `(x - m) / max(s, s_floor)`.
pub fn extract_noise(x: &TimeSeries, signal: &DualSignal, s_floor: f64) -> Result<NoiseSeries> {
    if x.len() != signal.len() {
        return invalid(format!("series has {} points, signal {}", x.len(), signal.len()));
    }
    let values = x
        .values()
        .iter()
        .zip(signal.mean())
        .zip(signal.dispersion())
        .map(|((x, m), s)| (x - m) / s.max(s_floor))
        .collect();
    NoiseSeries::new(values)
}

/// Lag-`k` sample autocorrelation with the full-sample denominator.
pub fn autocorrelation(x: &[f64], k: usize) -> Result<f64> {
    let n = x.len();
    if k == 0 || k >= n {
        return invalid(format!("autocorrelation lag {k} needs 1 <= k < {n}"));
    }
    let m = mean(x);
    let denom: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    if denom <= 0.0 {
        return degenerate("autocorrelation of a constant series");
    }
    let num: f64 = (0..n - k).map(|t| (x[t] - m) * (x[t + k] - m)).sum();
    Ok(num / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LjungBox {
    pub statistic: f64,
    pub p_value: f64,
    pub lags: usize,
}

/// Ljung–Box portmanteau test over lags `1..=lags`.
pub fn ljung_box(x: &[f64], lags: usize) -> Result<LjungBox> {
    let n = x.len();
    if lags == 0 || lags >= n {
        return invalid(format!("Ljung-Box needs 1 <= lags < {n}, got {lags}"));
    }
    let nf = n as f64;
    let mut sum = 0.0;
    for k in 1..=lags {
        let r = autocorrelation(x, k)?;
        sum += r * r / (nf - k as f64);
    }
    let statistic = nf * (nf + 2.0) * sum;
    Ok(LjungBox { statistic, p_value: chi2_sf(statistic, lags), lags })
}

pub fn default_lb_lags(n: usize) -> usize {
    (n / 5).clamp(1, 10)
}

/// Least-squares fit via Householder QR.
#[derive(Debug, Clone)]
pub(crate) struct Ols {
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
}

/// `rows` is row-major `n x k`.
pub(crate) fn ols(rows: &[Vec<f64>], y: &[f64]) -> Result<Ols> {
    let n = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    if n <= k || k == 0 {
        return invalid(format!("regression with {n} rows and {k} columns"));
    }
    // column-major working copy
    let mut a: Vec<Vec<f64>> = (0..k).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let mut qty = y.to_vec();
    for j in 0..k {
        let norm = a[j][j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return degenerate("singular regression (zero column)");
        }
        let alpha = if a[j][j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[j][j..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for col in a.iter_mut().skip(j) {
                let f = 2.0 * v.iter().zip(&col[j..]).map(|(a, b)| a * b).sum::<f64>() / vnorm2;
                col[j..].iter_mut().zip(&v).for_each(|(c, v)| *c -= f * v);
            }
            let f = 2.0 * v.iter().zip(&qty[j..]).map(|(a, b)| a * b).sum::<f64>() / vnorm2;
            qty[j..].iter_mut().zip(&v).for_each(|(c, v)| *c -= f * v);
        }
    }
    let r = |i: usize, j: usize| a[j][i];
    let rmax = (0..k).map(|i| r(i, i).abs()).fold(0.0, f64::max);
    if (0..k).any(|i| r(i, i).abs() <= 1e-10 * rmax) {
        return degenerate("singular regression (collinear regressors)");
    }
    let mut beta = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|j| r(i, j) * beta[j]).sum();
        beta[i] = (qty[i] - s) / r(i, i);
    }
    let rss: f64 = qty[k..].iter().map(|v| v * v).sum();
    let sigma2 = rss / (n - k) as f64;
    if sigma2 <= 0.0 {
        return degenerate("regression fits exactly; t-ratios undefined");
    }
    // R^{-1}, upper triangular
    let mut rinv = vec![vec![0.0; k]; k];
    for i in 0..k {
        rinv[i][i] = 1.0 / r(i, i);
        for j in (0..i).rev() {
            let s: f64 = (j + 1..=i).map(|l| r(j, l) * rinv[l][i]).sum();
            rinv[j][i] = -s / r(j, j);
        }
    }
    let se = (0..k)
        .map(|j| (sigma2 * rinv[j].iter().map(|v| v * v).sum::<f64>()).sqrt())
        .collect();
    Ok(Ols { beta, se })
}

/// Fixed-lag Dickey–Fuller regression with a constant.
///
/// Regresses `Δy_t` on `[1, y_{t-1}, Δy_{t-1}, ..., Δy_{t-lag}]` and returns
/// the t-ratio of the `y_{t-1}` coefficient, the t-ratio of the longest lag
/// (if any), and the number of observations used.
pub fn adf_regression(y: &[f64], lag: usize) -> Result<(f64, Option<f64>, usize)> {
    let n = y.len();
    if n < lag + 4 {
        return invalid(format!("ADF regression with lag {lag} needs more than {} points", lag + 3));
    }
    let dy: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
    // dy[i] = y[i+1] - y[i]; response rows i = lag..dy.len()
    let mut rows = Vec::with_capacity(dy.len() - lag);
    let mut resp = Vec::with_capacity(dy.len() - lag);
    for i in lag..dy.len() {
        let mut row = Vec::with_capacity(lag + 2);
        row.push(1.0);
        row.push(y[i]);
        row.extend((1..=lag).map(|j| dy[i - j]));
        rows.push(row);
        resp.push(dy[i]);
    }
    let fit = ols(&rows, &resp)?;
    let tau = fit.beta[1] / fit.se[1];
    let last = (lag > 0).then(|| fit.beta[lag + 1] / fit.se[lag + 1]);
    Ok((tau, last, resp.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdfResult {
    pub statistic: f64,
    pub p_value: f64,
    pub lag: usize,
    pub nobs: usize,
    /// The p-value hit the `[0.001, 0.999]` clamp.
    pub p_bounded: bool,
}

pub const ADF_MIN_OBS: usize = 20;

/// Default maximum lag `floor(12 (T/100)^{1/4})`.
pub fn adf_default_max_lag(n: usize) -> usize {
    (12.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize
}

/// Augmented Dickey–Fuller test, constant only.
///
/// Starts from `max_lag` (default rule when `None`, truncated so that at
/// least 20 points remain) and drops the longest lag while its |t| < 1.645.
pub fn adf_test(y: &[f64], max_lag: Option<usize>) -> Result<AdfResult> {
    let n = y.len();
    if n < ADF_MIN_OBS + max_lag.unwrap_or(0) {
        return invalid(format!(
            "ADF test needs at least {} observations, got {n}",
            ADF_MIN_OBS + max_lag.unwrap_or(0)
        ));
    }
    let mut lag = match max_lag {
        Some(p) => p,
        None => adf_default_max_lag(n).min(n - ADF_MIN_OBS),
    };
    loop {
        let (tau, last, nobs) = adf_regression(y, lag)?;
        match last {
            Some(t) if t.abs() < 1.645 => lag -= 1,
            _ => {
                let (p_value, p_bounded) = adf_p_value(tau, nobs);
                return Ok(AdfResult { statistic: tau, p_value, lag, nobs, p_bounded });
            }
        }
    }
}

const ADF_LEVELS: [f64; 8] = [0.01, 0.025, 0.05, 0.10, 0.90, 0.95, 0.975, 0.99];
// constant-only tau quantiles by sample size (25, 50, 100, 250, 500, infinity)
const ADF_SIZES: [f64; 6] = [25.0, 50.0, 100.0, 250.0, 500.0, f64::INFINITY];
#[allow(clippy::approx_constant)]
const ADF_TABLE: [[f64; 8]; 6] = [
    [-3.75, -3.33, -3.00, -2.63, -0.37, 0.00, 0.34, 0.72],
    [-3.58, -3.22, -2.93, -2.60, -0.40, -0.03, 0.29, 0.66],
    [-3.51, -3.17, -2.89, -2.58, -0.42, -0.05, 0.26, 0.63],
    [-3.46, -3.14, -2.88, -2.57, -0.42, -0.06, 0.24, 0.62],
    [-3.44, -3.13, -2.87, -2.57, -0.43, -0.07, 0.24, 0.61],
    [-3.43, -3.12, -2.86, -2.57, -0.44, -0.07, 0.23, 0.60],
];

fn adf_quantiles(nobs: usize) -> [f64; 8] {
    let inv = |s: f64| if s.is_infinite() { 0.0 } else { 1.0 / s };
    let x = inv(nobs as f64);
    if x >= inv(ADF_SIZES[0]) {
        return ADF_TABLE[0];
    }
    // rows are ordered by decreasing 1/n
    for i in 0..ADF_SIZES.len() - 1 {
        let (a, b) = (inv(ADF_SIZES[i]), inv(ADF_SIZES[i + 1]));
        if x <= a && x >= b {
            let f = (a - x) / (a - b);
            let mut q = [0.0; 8];
            for (j, q) in q.iter_mut().enumerate() {
                *q = ADF_TABLE[i][j] + f * (ADF_TABLE[i + 1][j] - ADF_TABLE[i][j]);
            }
            return q;
        }
    }
    ADF_TABLE[ADF_SIZES.len() - 1]
}

/// Interpolated left-tail p-value of the constant-only τ statistic.
pub fn adf_p_value(tau: f64, nobs: usize) -> (f64, bool) {
    let q = adf_quantiles(nobs);
    let ln = ADF_LEVELS.map(f64::ln);
    let p = if tau <= q[0] {
        let slope = (ln[1] - ln[0]) / (q[1] - q[0]);
        (ln[0] + slope * (tau - q[0])).exp()
    } else if tau >= q[7] {
        let up = |p: f64| (1.0 - p).ln();
        let slope = (up(ADF_LEVELS[7]) - up(ADF_LEVELS[6])) / (q[7] - q[6]);
        1.0 - (up(ADF_LEVELS[7]) + slope * (tau - q[7])).exp()
    } else {
        let i = (0..7).find(|&i| tau >= q[i] && tau <= q[i + 1]).unwrap_or(6);
        let f = (tau - q[i]) / (q[i + 1] - q[i]);
        (ln[i] + f * (ln[i + 1] - ln[i])).exp()
    };
    let clamped = p.clamp(0.001, 0.999);
    (clamped, clamped != p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingStats {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub mean_drift: f64,
    pub std_drift: f64,
}

/// Sliding-window mean and sample std; drifts are max minus min of each,
/// divided by the overall sample std.
pub fn rolling_stats(x: &[f64], window: usize) -> Result<RollingStats> {
    if window < 2 || x.len() < 2 * window {
        return invalid(format!(
            "rolling window {window} needs 2 <= window <= T/2 (T = {})",
            x.len()
        ));
    }
    let means: Vec<f64> = x.windows(window).map(mean).collect();
    let stds: Vec<f64> = x.windows(window).map(std_sample).collect();
    let overall = std_sample(x);
    let range = |v: &[f64]| {
        let hi = v.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        let lo = v.iter().fold(f64::INFINITY, |a, b| a.min(*b));
        hi - lo
    };
    let (mean_drift, std_drift) = if overall > 0.0 {
        (range(&means) / overall, range(&stds) / overall)
    } else {
        (0.0, 0.0)
    };
    Ok(RollingStats { means, stds, mean_drift, std_drift })
}

pub fn default_rolling_window(n: usize) -> usize {
    (n / 10).max(2).min(n / 2)
}

/// KL divergence from the moment-matched Gaussian to N(0, 1):
/// `(σ² + μ² - 1 - ln σ²) / 2` with population moments.
pub fn kl_to_standard_normal(x: &[f64]) -> Result<f64> {
    if x.len() < 2 {
        return invalid("KL divergence needs at least 2 points");
    }
    let v = variance_pop(x);
    if v <= 0.0 {
        return degenerate("KL divergence of a zero-variance sample");
    }
    let mu = mean(x);
    Ok(((v + mu * mu - 1.0 - v.ln()) / 2.0).max(0.0))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    /// `None` uses the default lag rule.
    pub adf_max_lag: Option<usize>,
    pub lb_lags: Option<usize>,
    pub rolling_window: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub adf_statistic: f64,
    pub adf_p: f64,
    pub adf_lag: usize,
    pub adf_p_bounded: bool,
    pub lb_statistic: f64,
    pub lb_p: f64,
    pub lb_lags: usize,
    pub rolling_window: usize,
    pub rolling_mean_drift: f64,
    pub rolling_std_drift: f64,
    pub kl_to_standard_normal: f64,
    pub noise_mean: f64,
    pub noise_std: f64,
    /// Autocorrelations at lags `1..=lb_lags`.
    pub acf: Vec<f64>,
    /// Pearson correlation of the noise with the mean signal (0 when undefined).
    pub corr_noise_mean: f64,
    /// Pearson correlation of the noise with the dispersion signal (0 when undefined).
    pub corr_noise_disp: f64,
}

/// Runs every diagnostic on an isolated noise series.
pub fn diagnose(noise: &[f64], signal: Option<&DualSignal>, cfg: &DiagnosticsConfig) -> Result<DiagnosticsReport> {
    let n = noise.len();
    let adf = adf_test(noise, cfg.adf_max_lag)?;
    let lags = cfg.lb_lags.unwrap_or_else(|| default_lb_lags(n));
    let lb = ljung_box(noise, lags)?;
    let window = cfg.rolling_window.unwrap_or_else(|| default_rolling_window(n));
    let rolling = rolling_stats(noise, window)?;
    let kl = kl_to_standard_normal(noise)?;
    let acf = (1..=lags).map(|k| autocorrelation(noise, k)).collect::<Result<Vec<_>>>()?;
    let (corr_noise_mean, corr_noise_disp) = match signal {
        Some(sig) => {
            if sig.len() != n {
                return invalid("signal and noise lengths differ");
            }
            (
                pearson(noise, sig.mean()).unwrap_or(0.0),
                pearson(noise, sig.dispersion()).unwrap_or(0.0),
            )
        }
        None => (0.0, 0.0),
    };
    Ok(DiagnosticsReport {
        adf_statistic: adf.statistic,
        adf_p: adf.p_value,
        adf_lag: adf.lag,
        adf_p_bounded: adf.p_bounded,
        lb_statistic: lb.statistic,
        lb_p: lb.p_value,
        lb_lags: lags,
        rolling_window: window,
        rolling_mean_drift: rolling.mean_drift,
        rolling_std_drift: rolling.std_drift,
        kl_to_standard_normal: kl,
        noise_mean: mean(noise),
        noise_std: std_sample(noise),
        acf,
        corr_noise_mean,
        corr_noise_disp,
    })
}
