//! Sequential and joint decomposition by direct minimization of the
//! smoothed loss.
//!
//! The observed series is centered and rescaled before optimizing; all loss
//! terms are translated back exactly, so the minimizer is the minimizer of
//! the original objective. Non-smooth terms are replaced by pseudo-Huber
//! surrogates, solved with a short continuation in the surrogate width that
//! ends at the configured width. Reported losses use exact absolute values.

mod lbfgs;
mod objective;
mod smooth;

use serde::{Deserialize, Serialize};

pub use lbfgs::{minimize, LbfgsOptions, LbfgsOutcome};
pub use objective::{dispersion_from, penalized, SmoothedObjective, TermSpec};
pub use smooth::{sigmoid, smooth_abs, smooth_abs_grad, softplus, softplus_inv};

use crate::diagnostics::{diagnose, extract_noise, DiagnosticsConfig, DiagnosticsReport};
use crate::error::{config, degenerate, invalid, Result};
use crate::loss::{fitting_metric, loss_joint, FitKind, JointLoss};
use crate::params::{BetaRule, Hyperparameters, Mode};
use crate::series::{DualSignal, NoiseSeries, TimeSeries, MIN_SERIES_LEN};
use crate::spc::{chart, WeightSeries};
use crate::stats::{mean, std_pop};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    pub rel_tolerance: f64,
    /// Pseudo-Huber width relative to the series scale, used when the
    /// hyperparameters leave `huber_delta` unset.
    pub huber_delta_rel: f64,
    /// Dispersion floor relative to the series scale, used when the
    /// hyperparameters leave `s_floor` unset.
    pub s_floor_rel: f64,
    /// Window of the moving average / rolling std used for the starting point.
    pub init_window: usize,
    pub memory: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            rel_tolerance: 1e-8,
            huber_delta_rel: 1e-3,
            s_floor_rel: 1e-6,
            init_window: 5,
            memory: 10,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.init_window == 0 || self.memory == 0 {
            return config("max_iterations, init_window and memory must be positive");
        }
        for (name, v) in [
            ("rel_tolerance", self.rel_tolerance),
            ("huber_delta_rel", self.huber_delta_rel),
            ("s_floor_rel", self.s_floor_rel),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return config(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// Optimization variables: the mean directly, the dispersion through
/// `s = softplus(u) + s_floor`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub mean_params: Vec<f64>,
    pub disp_params: Vec<f64>,
}

impl ParamVector {
    pub fn dispersion(&self, s_floor: f64) -> Vec<f64> {
        dispersion_from(&self.disp_params, s_floor)
    }

    fn concat(&self) -> Vec<f64> {
        let mut v = self.mean_params.clone();
        v.extend_from_slice(&self.disp_params);
        v
    }
}

/// Everything produced by one decomposition run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionResult {
    pub mode: Mode,
    pub signal: DualSignal,
    pub noise: NoiseSeries,
    pub weights: Vec<f64>,
    /// Objective of the final stage (dispersion stage when sequential, joint loss when joint).
    pub loss_value: f64,
    /// Exact-|·| breakdown of both losses at the solution.
    pub loss: JointLoss,
    pub beta_mean: f64,
    pub beta_disp: f64,
    pub scale: f64,
    pub huber_delta: f64,
    pub s_floor: f64,
    pub converged: bool,
    pub iterations: usize,
    /// `None` when the series is too short for the stationarity tests.
    pub diagnostics: Option<DiagnosticsReport>,
}

/// Data-driven first-difference multiplier:
/// `c_beta * RMSE(x, x̄) / (sqrt(T) * mean|Δx|)`.
pub fn beta_estimate(x: &TimeSeries, c_beta: f64) -> Result<f64> {
    if !(c_beta.is_finite() && c_beta > 0.0) {
        return config(format!("c_beta must be positive, got {c_beta}"));
    }
    let v = x.values();
    let t = v.len() as f64;
    let xbar = vec![mean(v); v.len()];
    let rmse = fitting_metric(v, &xbar, FitKind::Rmse)?;
    let mad = v.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (t - 1.0);
    if mad <= 0.0 {
        return degenerate("cannot estimate beta for a constant series");
    }
    Ok(c_beta * rmse / (t.sqrt() * mad))
}

/// `(beta_mean, beta_disp)` after applying the beta rule.
pub fn resolve_betas(x: &TimeSeries, h: &Hyperparameters) -> Result<(f64, f64)> {
    match h.beta_rule {
        BetaRule::Fixed => Ok((h.beta_mean, h.beta_disp)),
        BetaRule::Estimated { c_beta } => {
            let b = beta_estimate(x, c_beta)?;
            Ok((b, b))
        }
    }
}

/// Typical magnitude of the series: population std, or |mean| (at least 1) when constant.
pub fn series_scale(x: &[f64]) -> f64 {
    let s = std_pop(x);
    if s > 0.0 {
        s
    } else {
        mean(x).abs().max(1.0)
    }
}

fn fit_degree(kind: FitKind) -> i32 {
    match kind {
        FitKind::Mse | FitKind::Sse | FitKind::Maxse => 2,
        _ => 1,
    }
}

/// Analytic gradient of the smoothed joint objective at `params` (raw data units).
///
/// Returns the objective value and a gradient of length `2T`, mean block first.
pub fn objective_gradient(
    params: &ParamVector,
    x: &[f64],
    w: &WeightSeries,
    h: &Hyperparameters,
    betas: (f64, f64),
    huber_delta: f64,
    s_floor: f64,
) -> Result<(f64, Vec<f64>)> {
    let n = x.len();
    if params.mean_params.len() != n || params.disp_params.len() != n || w.values.len() != n {
        return invalid("parameter, weight and series lengths differ");
    }
    if n < MIN_SERIES_LEN {
        return invalid("objective needs at least 3 points");
    }
    let ones = vec![1.0; n];
    let obj = build_objective(x, &w.values, &ones, h, betas, huber_delta, s_floor, 1.0);
    let mut g = vec![0.0; 2 * n];
    let v = obj.joint_value_grad(&params.concat(), &mut g);
    Ok((v, g))
}

#[allow(clippy::too_many_arguments)]
fn build_objective<'a>(
    x: &'a [f64],
    w: &'a [f64],
    ones: &'a [f64],
    h: &Hyperparameters,
    betas: (f64, f64),
    delta: f64,
    s_floor: f64,
    fit_factor: f64,
) -> SmoothedObjective<'a> {
    let term = |beta, gamma| TermSpec {
        beta,
        gamma,
        fit: h.fit_kind,
        reg: h.reg_kind,
        delta,
        fit_factor,
    };
    SmoothedObjective {
        x,
        w_mean: w,
        w_disp: if h.disp_weighting { w } else { ones },
        mean: term(betas.0, h.gamma_mean),
        disp: term(betas.1, h.gamma_disp),
        theta: h.theta,
        s_floor,
    }
}

/// Centered moving average with the window shrunk at the edges.
fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..x.len())
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(x.len());
            mean(&x[lo..hi])
        })
        .collect()
}

fn rolling_std_centered(x: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..x.len())
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(x.len());
            std_pop(&x[lo..hi])
        })
        .collect()
}

fn initial_u(r: &[f64], window: usize, s_floor: f64) -> Vec<f64> {
    rolling_std_centered(r, window)
        .into_iter()
        .map(|s| softplus_inv((s - s_floor).max(1e-3 * s_floor).max(1e-12)))
        .collect()
}

/// Widths used in the continuation, ending at `delta`.
fn delta_schedule(delta: f64) -> Vec<f64> {
    let mut d = vec![delta];
    while *d.last().unwrap() < 0.1 {
        let next = d.last().unwrap() * 10.0;
        d.push(next);
    }
    d.reverse();
    d
}

struct Solve {
    x: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn solve_continuation<F>(mut f: F, x0: Vec<f64>, delta: f64, cfg: &OptimizerConfig) -> Solve
where
    F: FnMut(f64, &[f64], &mut [f64]) -> f64,
{
    let schedule = delta_schedule(delta);
    let mut x = x0;
    let mut used = 0;
    let mut converged = false;
    let last = schedule.len() - 1;
    for (k, d) in schedule.into_iter().enumerate() {
        let remaining = cfg.max_iterations.saturating_sub(used);
        if remaining == 0 {
            break;
        }
        // early stages only need a rough warm start
        let budget = if k == last { remaining } else { remaining.min(cfg.max_iterations / 4).max(1) };
        let opts = LbfgsOptions {
            max_iterations: budget,
            rel_tolerance: cfg.rel_tolerance,
            patience: 3,
            memory: cfg.memory,
        };
        let out = minimize(|p, g| f(d, p, g), x, &opts);
        used += out.iterations;
        x = out.x;
        if k == last {
            converged = out.converged;
        }
    }
    Solve { x, iterations: used, converged }
}

/// Decomposes with the mode selected in `h`.
pub fn decompose(x: &TimeSeries, h: &Hyperparameters, cfg: &OptimizerConfig) -> Result<DecompositionResult> {
    match h.mode {
        Mode::Sequential => decompose_sequential(x, h, cfg),
        Mode::Joint => decompose_joint(x, h, cfg),
    }
}

/// Shared setup: validation, weights, scaling.
struct Prepared {
    weights: WeightSeries,
    betas: (f64, f64),
    center: f64,
    scale: f64,
    huber_delta: f64,
    s_floor: f64,
    /// Centered and rescaled series.
    z: Vec<f64>,
}

fn prepare(x: &TimeSeries, h: &Hyperparameters, cfg: &OptimizerConfig) -> Result<Prepared> {
    h.validate()?;
    cfg.validate()?;
    let v = x.values();
    if v.len() < (h.spc_window + 2).max(MIN_SERIES_LEN) {
        return invalid(format!(
            "series of length {} is shorter than SPC window {} + 2",
            v.len(),
            h.spc_window
        ));
    }
    let weights = chart(x, h.spc_window, h.z_mode, h.weight_scheme, h.p_cutoff)?.w;
    let betas = resolve_betas(x, h)?;
    let center = mean(v);
    let scale = series_scale(v);
    let huber_delta = h.huber_delta.unwrap_or(cfg.huber_delta_rel * scale);
    let s_floor = h.s_floor.unwrap_or(cfg.s_floor_rel * scale);
    let z = v.iter().map(|x| (x - center) / scale).collect();
    Ok(Prepared { weights, betas, center, scale, huber_delta, s_floor, z })
}

fn finish(
    x: &TimeSeries,
    h: &Hyperparameters,
    prep: Prepared,
    m_scaled: &[f64],
    s_scaled: &[f64],
    converged: bool,
    iterations: usize,
) -> Result<DecompositionResult> {
    let m: Vec<f64> = m_scaled.iter().map(|m| prep.center + prep.scale * m).collect();
    let s: Vec<f64> = s_scaled.iter().map(|s| (prep.scale * s).max(prep.s_floor)).collect();
    let signal = DualSignal::new(m, s)?;
    let noise = extract_noise(x, &signal, prep.s_floor)?;
    let loss = loss_joint(x.values(), signal.mean(), signal.dispersion(), &prep.weights, prep.betas, h)?;
    let loss_value = match h.mode {
        Mode::Sequential => loss.disp.total,
        Mode::Joint => loss.combined,
    };
    let diagnostics = diagnose(noise.values(), Some(&signal), &DiagnosticsConfig::default()).ok();
    Ok(DecompositionResult {
        mode: h.mode,
        signal,
        noise,
        weights: prep.weights.values,
        loss_value,
        loss,
        beta_mean: prep.betas.0,
        beta_disp: prep.betas.1,
        scale: prep.scale,
        huber_delta: prep.huber_delta,
        s_floor: prep.s_floor,
        converged,
        iterations,
        diagnostics,
    })
}

/// Fits the mean first, then the dispersion on the absolute residuals.
pub fn decompose_sequential(x: &TimeSeries, h: &Hyperparameters, cfg: &OptimizerConfig) -> Result<DecompositionResult> {
    decompose_sequential_from(x, h, cfg, None)
}

/// As [`decompose_sequential`], with an optional perturbation added to the
/// starting mean (in data units).
pub fn decompose_sequential_from(
    x: &TimeSeries,
    h: &Hyperparameters,
    cfg: &OptimizerConfig,
    jitter: Option<&[f64]>,
) -> Result<DecompositionResult> {
    let prep = prepare(x, h, cfg)?;
    let n = prep.z.len();
    let ones = vec![1.0; n];
    let delta = prep.huber_delta / prep.scale;
    let floor = prep.s_floor / prep.scale;
    let factor = prep.scale.powi(fit_degree(h.fit_kind) - 1);

    let mut m0 = moving_average(&prep.z, cfg.init_window);
    if let Some(j) = jitter {
        m0.iter_mut().zip(j).for_each(|(m, j)| *m += j / prep.scale);
    }
    let stage1 = solve_continuation(
        |d, m, g| build_objective(&prep.z, &prep.weights.values, &ones, h, prep.betas, d, floor, factor).mean_value_grad(m, g),
        m0,
        delta,
        cfg,
    );
    let m = stage1.x;
    let r_abs: Vec<f64> = prep.z.iter().zip(&m).map(|(x, m)| (x - m).abs()).collect();
    let u0 = initial_u(
        &prep.z.iter().zip(&m).map(|(x, m)| x - m).collect::<Vec<_>>(),
        cfg.init_window,
        floor,
    );
    let stage2 = solve_continuation(
        |d, u, g| {
            build_objective(&prep.z, &prep.weights.values, &ones, h, prep.betas, d, floor, factor)
                .disp_value_grad(&r_abs, u, g)
        },
        u0,
        delta,
        cfg,
    );
    let s = dispersion_from(&stage2.x, floor);
    let converged = stage1.converged && stage2.converged;
    let iterations = stage1.iterations + stage2.iterations;
    finish(x, h, prep, &m, &s, converged, iterations)
}

/// Fits mean and dispersion together by minimizing `Loss_M + θ Loss_S`.
pub fn decompose_joint(x: &TimeSeries, h: &Hyperparameters, cfg: &OptimizerConfig) -> Result<DecompositionResult> {
    decompose_joint_from(x, h, cfg, None)
}

/// As [`decompose_joint`], with an optional perturbation of the starting mean.
pub fn decompose_joint_from(
    x: &TimeSeries,
    h: &Hyperparameters,
    cfg: &OptimizerConfig,
    jitter: Option<&[f64]>,
) -> Result<DecompositionResult> {
    let prep = prepare(x, h, cfg)?;
    let n = prep.z.len();
    let ones = vec![1.0; n];
    let delta = prep.huber_delta / prep.scale;
    let floor = prep.s_floor / prep.scale;
    let factor = prep.scale.powi(fit_degree(h.fit_kind) - 1);

    let mut m0 = moving_average(&prep.z, cfg.init_window);
    if let Some(j) = jitter {
        m0.iter_mut().zip(j).for_each(|(m, j)| *m += j / prep.scale);
    }
    let r0: Vec<f64> = prep.z.iter().zip(&m0).map(|(x, m)| x - m).collect();
    let start = ParamVector { disp_params: initial_u(&r0, cfg.init_window, floor), mean_params: m0 };
    let sol = solve_continuation(
        |d, p, g| build_objective(&prep.z, &prep.weights.values, &ones, h, prep.betas, d, floor, factor).joint_value_grad(p, g),
        start.concat(),
        delta,
        cfg,
    );
    let (m, u) = sol.x.split_at(n);
    let s = dispersion_from(u, floor);
    finish(x, h, prep, m, &s, sol.converged, sol.iterations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::RegKind;
    use crate::spc::WeightScheme;
    use crate::stats::std_sample;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gauss(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn beta_estimate_examples() {
        let alt: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
        let x = TimeSeries::new(alt.clone()).unwrap();
        assert_relative_eq!(beta_estimate(&x, 25.0).unwrap(), 1.25, max_relative = 1e-12);
        let scaled = TimeSeries::new(alt.iter().map(|v| v * 7.5).collect()).unwrap();
        assert_relative_eq!(beta_estimate(&scaled, 25.0).unwrap(), 1.25, max_relative = 1e-12);
        let c = TimeSeries::new(vec![2.0; 10]).unwrap();
        assert!(matches!(beta_estimate(&c, 25.0), Err(crate::Error::Degenerate(_))));
    }

    #[test]
    fn constant_input() {
        for c in [0.0, 3.0, -250.0] {
            let x = TimeSeries::new(vec![c; 40]).unwrap();
            let h = Hyperparameters { beta_rule: BetaRule::Fixed, ..Default::default() };
            let r = decompose_sequential(&x, &h, &OptimizerConfig::default()).unwrap();
            for m in r.signal.mean() {
                assert!((m - c).abs() <= 1e-6 * c.abs() + 1e-9, "{m} vs {c}");
            }
            assert!(r.loss.mean.fitting < 1e-9);
            for s in r.signal.dispersion() {
                assert!(*s >= r.s_floor && *s < 1e-3 * r.scale, "{s}");
            }
        }
    }

    #[test]
    fn white_noise_is_flattened() {
        let mut ok = 0;
        for seed in 0..10 {
            let x = TimeSeries::new(gauss(seed, 200)).unwrap();
            let h = Hyperparameters {
                beta_rule: BetaRule::Fixed,
                beta_mean: 20.0,
                beta_disp: 20.0,
                weight_scheme: WeightScheme::None,
                ..Default::default()
            };
            let r = decompose_sequential(&x, &h, &OptimizerConfig::default()).unwrap();
            let xbar = mean(x.values());
            let dev: Vec<f64> = r.signal.mean().iter().map(|m| m - xbar).collect();
            let s_mean = mean(r.signal.dispersion());
            if std_sample(&dev) < 0.2 && (0.7..=1.3).contains(&s_mean) {
                ok += 1;
            }
        }
        assert!(ok >= 9, "{ok}/10");
    }

    #[test]
    fn step_is_preserved_with_binary_weights() {
        for seed in 0..5 {
            let mut v = gauss(50 + seed, 200);
            v[100..].iter_mut().for_each(|x| *x += 5.0);
            let x = TimeSeries::new(v).unwrap();
            let h = Hyperparameters { reg_kind: RegKind::Mae, ..Default::default() };
            let r = decompose_sequential(&x, &h, &OptimizerConfig::default()).unwrap();
            let m = r.signal.mean();
            let jump = mean(&m[100..]) - mean(&m[..100]);
            assert!((jump - 5.0).abs() < 0.5, "seed {seed}: {jump}");
        }
    }

    #[test]
    fn reconstruction_identity() {
        let x = TimeSeries::new(gauss(3, 120)).unwrap();
        let r = decompose_joint(&x, &Hyperparameters { mode: Mode::Joint, ..Default::default() }, &OptimizerConfig::default()).unwrap();
        for t in 0..x.len() {
            let s = r.signal.dispersion()[t];
            assert!(s >= r.s_floor);
            let back = r.signal.mean()[t] + s * r.noise.values()[t];
            assert!((back - x.values()[t]).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_raw_units() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 20;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let w = WeightSeries { values: (0..n).map(|_| rng.random_range(0.0..=1.0)).collect() };
        let h = Hyperparameters { theta: 0.7, ..Default::default() };
        let p = ParamVector {
            mean_params: (0..n).map(|_| rng.random_range(-3.0..3.0)).collect(),
            disp_params: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
        };
        let (_, g) = objective_gradient(&p, &x, &w, &h, (2.0, 1.5), 1e-3, 1e-6).unwrap();
        for i in 0..2 * n {
            let mut q = p.clone();
            let step = 1e-6;
            let bump = |q: &mut ParamVector, d: f64| {
                if i < n { q.mean_params[i] += d } else { q.disp_params[i - n] += d }
            };
            bump(&mut q, step);
            let (fp, _) = objective_gradient(&q, &x, &w, &h, (2.0, 1.5), 1e-3, 1e-6).unwrap();
            bump(&mut q, -2.0 * step);
            let (fm, _) = objective_gradient(&q, &x, &w, &h, (2.0, 1.5), 1e-3, 1e-6).unwrap();
            let fd = (fp - fm) / (2.0 * step);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
            assert!(rel < 1e-5, "component {i}: analytic {} fd {fd}", g[i]);
        }
    }

    #[test]
    fn shift_equivariance() {
        let v = gauss(8, 150);
        let x = TimeSeries::new(v.clone()).unwrap();
        let xs = TimeSeries::new(v.iter().map(|x| x + 123.0).collect()).unwrap();
        let h = Hyperparameters { mode: Mode::Joint, ..Default::default() };
        let cfg = OptimizerConfig { rel_tolerance: 1e-12, ..Default::default() };
        let a = decompose(&x, &h, &cfg).unwrap();
        let b = decompose(&xs, &h, &cfg).unwrap();
        for t in 0..v.len() {
            let dm = (b.signal.mean()[t] - a.signal.mean()[t] - 123.0).abs();
            assert!(dm < 1e-4, "t={t} dm={dm} conv {} {} it {} {}", a.converged, b.converged, a.iterations, b.iterations);
            assert!((b.signal.dispersion()[t] - a.signal.dispersion()[t]).abs() < 1e-4);
        }
    }

    #[test]
    fn rejects_short_and_bad_config() {
        let x = TimeSeries::new(vec![1.0, 2.0, 1.5, 3.0]).unwrap();
        assert!(decompose(&x, &Hyperparameters::default(), &OptimizerConfig::default()).is_err());
        let x = TimeSeries::new(gauss(1, 30)).unwrap();
        let h = Hyperparameters { beta_mean: -1.0, ..Default::default() };
        assert!(matches!(decompose(&x, &h, &OptimizerConfig::default()), Err(crate::Error::Config(_))));
    }
}
