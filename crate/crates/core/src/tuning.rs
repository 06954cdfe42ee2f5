//! Hyperparameter search that drives the isolated noise toward stationary
//! white noise.
//!
//! Candidates come from a coarse grid over the declared axes; the best grid
//! point is then refined by a Nelder–Mead simplex over the continuous
//! multipliers in log space, clamped to the declared ranges.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagnosticsReport;
use crate::error::{config, Error, Result};
use crate::loss::{FitKind, RegKind};
use crate::optimizer::{decompose_joint_from, decompose_sequential_from, series_scale, OptimizerConfig};
use crate::params::{BetaRule, Hyperparameters, Mode};
use crate::series::TimeSeries;
use crate::spc::{WeightScheme, ZMode};

/// Optional secondary term `weight * (count of |ΔM_t| > jump_threshold) / T`.
///
/// A positive weight penalizes stepped mean signals, a negative one rewards them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepTerm {
    pub weight: f64,
    pub jump_threshold: f64,
}

/// Weights `a1..a5` of the composite stationarity score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreWeights {
    pub adf: f64,
    pub lb: f64,
    pub kl: f64,
    pub drift: f64,
    pub corr: f64,
    pub step: Option<StepTerm>,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self { adf: 1.0, lb: 10.0, kl: 1.0, drift: 0.5, corr: 0.5, step: None }
    }
}

impl ScoreWeights {
    fn validate(&self) -> Result<()> {
        let a = [self.adf, self.lb, self.kl, self.drift, self.corr];
        if a.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return config("score weights must be finite and non-negative");
        }
        if let Some(s) = self.step {
            if !s.weight.is_finite() || !(s.jump_threshold.is_finite() && s.jump_threshold >= 0.0) {
                return config("step term needs a finite weight and a non-negative jump_threshold");
            }
        }
        Ok(())
    }
}

/// Composite score of a diagnostics report; 0 for ideal white noise.
pub fn stationarity_score(report: &DiagnosticsReport, w: &ScoreWeights) -> f64 {
    w.adf * (report.adf_p - 0.05).max(0.0)
        + w.lb * (0.05 - report.lb_p).max(0.0)
        + w.kl * report.kl_to_standard_normal
        + w.drift * (report.rolling_mean_drift + report.rolling_std_drift)
        + w.corr * (report.corr_noise_mean.abs() + report.corr_noise_disp.abs())
}

/// Fraction of first differences of `m` larger than `threshold` in magnitude.
pub fn step_fraction(m: &[f64], threshold: f64) -> f64 {
    let jumps = m.windows(2).filter(|w| (w[1] - w[0]).abs() > threshold).count();
    jumps as f64 / m.len() as f64
}

/// One value of the β axis: a fixed multiplier or the data-driven estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaChoice {
    Fixed(f64),
    Estimated { estimated: f64 },
}

/// Axes of the search. An empty axis keeps the value from `base`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSpace {
    pub base: Hyperparameters,
    /// A fixed value sets `beta_mean`; an estimated choice sets both
    /// multipliers from the data and ignores the `beta_disp` axis.
    pub beta_mean: Vec<BetaChoice>,
    pub beta_disp: Vec<f64>,
    pub gamma_mean: Vec<f64>,
    pub gamma_disp: Vec<f64>,
    pub theta: Vec<f64>,
    pub spc_window: Vec<usize>,
    pub p_cutoff: Vec<f64>,
    pub weight_scheme: Vec<WeightScheme>,
    pub mode: Vec<Mode>,
    pub fit_kind: Vec<FitKind>,
    pub reg_kind: Vec<RegKind>,
    pub z_mode: Vec<ZMode>,
    pub disp_weighting: Vec<bool>,
}

fn expand<T: Clone>(hs: Vec<Hyperparameters>, values: &[T], set: impl Fn(&mut Hyperparameters, &T)) -> Vec<Hyperparameters> {
    if values.is_empty() {
        return hs;
    }
    let set = &set;
    hs.into_iter()
        .flat_map(|h| {
            values.iter().map(move |v| {
                let mut h = h.clone();
                set(&mut h, v);
                h
            })
        })
        .collect()
}

fn range(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some((lo, hi))
}

fn within(v: f64, values: &[f64], base: f64) -> bool {
    match range(values) {
        Some((lo, hi)) => v >= lo && v <= hi,
        None => v == base,
    }
}

fn listed<T: PartialEq>(v: &T, values: &[T], base: &T) -> bool {
    if values.is_empty() {
        v == base
    } else {
        values.contains(v)
    }
}

impl SearchSpace {
    pub fn is_empty(&self) -> bool {
        self.beta_mean.is_empty()
            && self.beta_disp.is_empty()
            && self.gamma_mean.is_empty()
            && self.gamma_disp.is_empty()
            && self.theta.is_empty()
            && self.spc_window.is_empty()
            && self.p_cutoff.is_empty()
            && self.weight_scheme.is_empty()
            && self.mode.is_empty()
            && self.fit_kind.is_empty()
            && self.reg_kind.is_empty()
            && self.z_mode.is_empty()
            && self.disp_weighting.is_empty()
    }

    fn fixed_betas(&self) -> Vec<f64> {
        self.beta_mean
            .iter()
            .filter_map(|b| match b {
                BetaChoice::Fixed(v) => Some(*v),
                BetaChoice::Estimated { .. } => None,
            })
            .collect()
    }

    /// Cartesian product of the axes, in declaration order, without duplicates.
    pub fn grid(&self) -> Vec<Hyperparameters> {
        let base_disp = self.base.beta_disp;
        let mut hs = expand(vec![self.base.clone()], &self.beta_mean, |h, b| match *b {
            BetaChoice::Fixed(v) => {
                h.beta_rule = BetaRule::Fixed;
                h.beta_mean = v;
            }
            BetaChoice::Estimated { estimated } => {
                h.beta_rule = BetaRule::Estimated { c_beta: estimated };
                h.beta_disp = base_disp;
            }
        });
        if !self.beta_disp.is_empty() {
            hs = hs
                .into_iter()
                .flat_map(|h| {
                    if matches!(h.beta_rule, BetaRule::Estimated { .. }) {
                        vec![h]
                    } else {
                        expand(vec![h], &self.beta_disp, |h, v| h.beta_disp = *v)
                    }
                })
                .collect();
        }
        hs = expand(hs, &self.gamma_mean, |h, v| h.gamma_mean = *v);
        hs = expand(hs, &self.gamma_disp, |h, v| h.gamma_disp = *v);
        hs = expand(hs, &self.theta, |h, v| h.theta = *v);
        hs = expand(hs, &self.spc_window, |h, v| h.spc_window = *v);
        hs = expand(hs, &self.p_cutoff, |h, v| h.p_cutoff = *v);
        hs = expand(hs, &self.weight_scheme, |h, v| h.weight_scheme = *v);
        hs = expand(hs, &self.mode, |h, v| h.mode = *v);
        hs = expand(hs, &self.fit_kind, |h, v| h.fit_kind = *v);
        hs = expand(hs, &self.reg_kind, |h, v| h.reg_kind = *v);
        hs = expand(hs, &self.z_mode, |h, v| h.z_mode = *v);
        hs = expand(hs, &self.disp_weighting, |h, v| h.disp_weighting = *v);
        let mut unique: Vec<Hyperparameters> = Vec::with_capacity(hs.len());
        for h in hs {
            if !unique.contains(&h) {
                unique.push(h);
            }
        }
        unique
    }

    /// Whether `h` lies in the space: listed discrete values, continuous
    /// values inside the declared range, everything else equal to `base`.
    pub fn contains(&self, h: &Hyperparameters) -> bool {
        let b = &self.base;
        let beta_ok = match h.beta_rule {
            BetaRule::Estimated { c_beta } => {
                if self.beta_mean.is_empty() {
                    h.beta_rule == b.beta_rule && h.beta_mean == b.beta_mean
                } else {
                    self.beta_mean.contains(&BetaChoice::Estimated { estimated: c_beta })
                }
            }
            BetaRule::Fixed => {
                if self.beta_mean.is_empty() {
                    b.beta_rule == BetaRule::Fixed && h.beta_mean == b.beta_mean
                } else {
                    within(h.beta_mean, &self.fixed_betas(), f64::NAN)
                }
            }
        };
        let disp_ok = matches!(h.beta_rule, BetaRule::Estimated { .. }) && h.beta_disp == b.beta_disp
            || within(h.beta_disp, &self.beta_disp, b.beta_disp);
        beta_ok
            && disp_ok
            && within(h.gamma_mean, &self.gamma_mean, b.gamma_mean)
            && within(h.gamma_disp, &self.gamma_disp, b.gamma_disp)
            && within(h.theta, &self.theta, b.theta)
            && listed(&h.spc_window, &self.spc_window, &b.spc_window)
            && within(h.p_cutoff, &self.p_cutoff, b.p_cutoff)
            && listed(&h.weight_scheme, &self.weight_scheme, &b.weight_scheme)
            && listed(&h.mode, &self.mode, &b.mode)
            && listed(&h.fit_kind, &self.fit_kind, &b.fit_kind)
            && listed(&h.reg_kind, &self.reg_kind, &b.reg_kind)
            && listed(&h.z_mode, &self.z_mode, &b.z_mode)
            && listed(&h.disp_weighting, &self.disp_weighting, &b.disp_weighting)
            && h.huber_delta == b.huber_delta
            && h.s_floor == b.s_floor
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Grid,
    NelderMead,
    GridThenNelderMead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningSpec {
    pub search_space: SearchSpace,
    pub objective_weights: ScoreWeights,
    /// Maximum number of candidate evaluations.
    pub budget: usize,
    /// One decomposition per seed, each from a differently perturbed start;
    /// empty means a single unperturbed run.
    pub seeds: Vec<u64>,
    pub method: Method,
    pub optimizer: OptimizerConfig,
    /// Standard deviation of the start perturbation, relative to the series scale.
    pub jitter_rel: f64,
}

impl Default for TuningSpec {
    fn default() -> Self {
        Self {
            search_space: SearchSpace::default(),
            objective_weights: ScoreWeights::default(),
            budget: 60,
            seeds: Vec::new(),
            method: Method::GridThenNelderMead,
            optimizer: OptimizerConfig::default(),
            jitter_rel: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Grid,
    NelderMead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub index: usize,
    pub phase: Phase,
    pub h: Hyperparameters,
    /// Mean score over seeds; `None` when the evaluation failed.
    pub score: Option<f64>,
    pub seed_scores: Vec<f64>,
    /// Diagnostics of the first seed's decomposition.
    pub diagnostics: Option<DiagnosticsReport>,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub best_h: Hyperparameters,
    pub best_score: f64,
    pub best_index: usize,
    pub trace: Vec<TraceEntry>,
}

struct Outcome {
    score: Option<f64>,
    seed_scores: Vec<f64>,
    diagnostics: Option<DiagnosticsReport>,
    converged: bool,
    error: Option<String>,
}

fn jitter(seed: u64, n: usize, sd: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sd * z
        })
        .collect()
}

/// Mean score of `h` over the spec's seeds.
fn evaluate(x: &TimeSeries, h: &Hyperparameters, spec: &TuningSpec) -> Outcome {
    let sd = spec.jitter_rel * series_scale(x.values());
    let starts: Vec<Option<Vec<f64>>> = if spec.seeds.is_empty() {
        vec![None]
    } else {
        spec.seeds.iter().map(|s| Some(jitter(*s, x.len(), sd))).collect()
    };
    let mut seed_scores = Vec::with_capacity(starts.len());
    let mut diagnostics = None;
    let mut converged = true;
    for start in &starts {
        let run = match h.mode {
            Mode::Sequential => decompose_sequential_from(x, h, &spec.optimizer, start.as_deref()),
            Mode::Joint => decompose_joint_from(x, h, &spec.optimizer, start.as_deref()),
        };
        let result = match run {
            Ok(r) => r,
            Err(e) => {
                return Outcome { score: None, seed_scores, diagnostics, converged: false, error: Some(e.to_string()) };
            }
        };
        let Some(report) = result.diagnostics else {
            let error = Some("noise diagnostics could not be computed".to_string());
            return Outcome { score: None, seed_scores, diagnostics, converged: false, error };
        };
        let mut score = stationarity_score(&report, &spec.objective_weights);
        if let Some(step) = spec.objective_weights.step {
            score += step.weight * step_fraction(result.signal.mean(), step.jump_threshold);
        }
        converged &= result.converged;
        seed_scores.push(score);
        diagnostics.get_or_insert(report);
    }
    let score = Some(seed_scores.iter().sum::<f64>() / seed_scores.len() as f64);
    Outcome { score, seed_scores, diagnostics, converged, error: None }
}

fn record(trace: &mut Vec<TraceEntry>, phase: Phase, h: Hyperparameters, o: Outcome) -> Option<f64> {
    let score = o.score;
    trace.push(TraceEntry {
        index: trace.len(),
        phase,
        h,
        score: o.score,
        seed_scores: o.seed_scores,
        diagnostics: o.diagnostics,
        converged: o.converged,
        error: o.error,
    });
    score
}

/// A continuous multiplier the simplex may move, with log-space bounds.
#[derive(Debug, Clone, Copy)]
enum Knob {
    BetaMean,
    BetaDisp,
    GammaMean,
    GammaDisp,
    Theta,
}

impl Knob {
    fn get(self, h: &Hyperparameters) -> f64 {
        match self {
            Knob::BetaMean => h.beta_mean,
            Knob::BetaDisp => h.beta_disp,
            Knob::GammaMean => h.gamma_mean,
            Knob::GammaDisp => h.gamma_disp,
            Knob::Theta => h.theta,
        }
    }

    fn set(self, h: &mut Hyperparameters, v: f64) {
        match self {
            Knob::BetaMean => h.beta_mean = v,
            Knob::BetaDisp => h.beta_disp = v,
            Knob::GammaMean => h.gamma_mean = v,
            Knob::GammaDisp => h.gamma_disp = v,
            Knob::Theta => h.theta = v,
        }
    }
}

/// Knobs with a non-degenerate declared range that matter for `h`.
fn knobs(space: &SearchSpace, h: &Hyperparameters) -> Vec<(Knob, f64, f64)> {
    let fixed = h.beta_rule == BetaRule::Fixed;
    let candidates = [
        (Knob::BetaMean, space.fixed_betas(), fixed),
        (Knob::BetaDisp, space.beta_disp.clone(), fixed),
        (Knob::GammaMean, space.gamma_mean.clone(), true),
        (Knob::GammaDisp, space.gamma_disp.clone(), true),
        (Knob::Theta, space.theta.clone(), h.mode == Mode::Joint),
    ];
    candidates
        .into_iter()
        .filter(|(_, _, active)| *active)
        .filter_map(|(k, values, _)| {
            let (lo, hi) = range(&values)?;
            // zero is allowed on an axis but has no logarithm
            let lo = if lo > 0.0 { lo } else { hi * 1e-6 };
            (hi > lo && hi > 0.0).then(|| (k, lo.ln(), hi.ln()))
        })
        .collect()
}

struct Simplex<'a> {
    x: &'a TimeSeries,
    spec: &'a TuningSpec,
    start: Hyperparameters,
    knobs: Vec<(Knob, f64, f64)>,
    cache: HashMap<Vec<u64>, f64>,
    trace: &'a mut Vec<TraceEntry>,
}

impl Simplex<'_> {
    fn clamp(&self, p: &mut [f64]) {
        for (v, (_, lo, hi)) in p.iter_mut().zip(&self.knobs) {
            *v = v.clamp(*lo, *hi);
        }
    }

    fn to_h(&self, p: &[f64]) -> Hyperparameters {
        let mut h = self.start.clone();
        for (v, (k, _, _)) in p.iter().zip(&self.knobs) {
            k.set(&mut h, v.exp());
        }
        h
    }

    /// Score of a point; `None` once the budget is spent.
    fn eval(&mut self, p: &mut [f64]) -> Option<f64> {
        self.clamp(p);
        let key: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
        if let Some(f) = self.cache.get(&key) {
            return Some(*f);
        }
        if self.trace.len() >= self.spec.budget {
            return None;
        }
        let h = self.to_h(p);
        let o = evaluate(self.x, &h, self.spec);
        let f = record(self.trace, Phase::NelderMead, h, o).unwrap_or(f64::INFINITY);
        self.cache.insert(key, f);
        Some(f)
    }

    fn run(&mut self, start_score: f64) {
        let d = self.knobs.len();
        let mut x0: Vec<f64> = self.knobs.iter().map(|(k, _, _)| k.get(&self.start).ln()).collect();
        self.clamp(&mut x0);
        self.cache.insert(x0.iter().map(|v| v.to_bits()).collect(), start_score);
        let mut simplex = vec![(x0.clone(), start_score)];
        for i in 0..d {
            let (_, lo, hi) = self.knobs[i];
            let step = 0.25 * (hi - lo);
            let mut p = x0.clone();
            p[i] = if p[i] + step <= hi { p[i] + step } else { p[i] - step };
            let Some(f) = self.eval(&mut p) else { return };
            simplex.push((p, f));
        }
        let mut guard = 0;
        loop {
            guard += 1;
            if guard > 10_000 {
                return;
            }
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let (best, worst) = (simplex[0].1, simplex[d].1);
            let size = simplex[1..]
                .iter()
                .map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if size < 1e-3 || (worst - best).abs() <= 1e-12 * (1.0 + best.abs()) {
                return;
            }
            let centroid: Vec<f64> =
                (0..d).map(|j| simplex[..d].iter().map(|(p, _)| p[j]).sum::<f64>() / d as f64).collect();
            let along = |t: f64, from: &[f64]| -> Vec<f64> {
                centroid.iter().zip(from).map(|(c, w)| c + t * (w - c)).collect()
            };
            let xw = simplex[d].0.clone();
            let mut xr = along(-1.0, &xw);
            let Some(fr) = self.eval(&mut xr) else { return };
            if fr < best {
                let mut xe = along(-2.0, &xw);
                let Some(fe) = self.eval(&mut xe) else { return };
                simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < simplex[d - 1].1 {
                simplex[d] = (xr, fr);
                continue;
            }
            let mut xc = if fr < worst { along(0.5, &xr) } else { along(0.5, &xw) };
            let Some(fc) = self.eval(&mut xc) else { return };
            if fc < fr.min(worst) {
                simplex[d] = (xc, fc);
                continue;
            }
            let xb = simplex[0].0.clone();
            for v in simplex.iter_mut().skip(1) {
                let mut p: Vec<f64> = xb.iter().zip(&v.0).map(|(b, q)| b + 0.5 * (q - b)).collect();
                let Some(f) = self.eval(&mut p) else { return };
                *v = (p, f);
            }
        }
    }
}

fn best_of(trace: &[TraceEntry]) -> Option<(usize, f64)> {
    trace
        .iter()
        .filter_map(|e| e.score.map(|s| (e.index, s)))
        .fold(None, |acc, (i, s)| match acc {
            Some((_, b)) if b <= s => acc,
            _ => Some((i, s)),
        })
}

/// Searches `spec.search_space` for the hyperparameters whose isolated
/// noise scores best; deterministic given the spec.
pub fn tune(x: &TimeSeries, spec: &TuningSpec) -> Result<TuningResult> {
    if spec.budget == 0 {
        return config("tuning budget must be at least 1");
    }
    if spec.search_space.is_empty() {
        return config("search space declares no axis");
    }
    if !(spec.jitter_rel.is_finite() && spec.jitter_rel >= 0.0) {
        return config("jitter_rel must be finite and non-negative");
    }
    spec.objective_weights.validate()?;
    spec.optimizer.validate()?;
    let grid = spec.search_space.grid();
    for h in &grid {
        h.validate()?;
    }
    let grid = match spec.method {
        Method::NelderMead => grid[..1].to_vec(),
        _ => grid,
    };
    if grid.len() > spec.budget {
        return config(format!("budget {} is smaller than the grid of {} candidates", spec.budget, grid.len()));
    }

    let outcomes: Vec<Outcome> = grid.par_iter().map(|h| evaluate(x, h, spec)).collect();
    let mut trace = Vec::with_capacity(spec.budget);
    for (h, o) in grid.into_iter().zip(outcomes) {
        record(&mut trace, Phase::Grid, h, o);
    }

    if spec.method != Method::Grid {
        if let Some((i, s)) = best_of(&trace) {
            let start = trace[i].h.clone();
            let knobs = knobs(&spec.search_space, &start);
            if !knobs.is_empty() && trace.len() < spec.budget {
                let mut nm = Simplex { x, spec, start, knobs, cache: HashMap::new(), trace: &mut trace };
                nm.run(s);
            }
        }
    }

    match best_of(&trace) {
        Some((best_index, best_score)) => {
            Ok(TuningResult { best_h: trace[best_index].h.clone(), best_score, best_index, trace })
        }
        None => {
            let message = trace
                .first()
                .and_then(|e| e.error.clone())
                .unwrap_or_else(|| "no candidate could be evaluated".into());
            Err(Error::Tuning { message, trace })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ideal() -> DiagnosticsReport {
        DiagnosticsReport {
            adf_statistic: -10.0,
            adf_p: 0.001,
            adf_lag: 0,
            adf_p_bounded: true,
            lb_statistic: 1.0,
            lb_p: 0.9,
            lb_lags: 10,
            rolling_window: 20,
            rolling_mean_drift: 0.0,
            rolling_std_drift: 0.0,
            kl_to_standard_normal: 0.0,
            noise_mean: 0.0,
            noise_std: 1.0,
            acf: vec![0.0; 10],
            corr_noise_mean: 0.0,
            corr_noise_disp: 0.0,
        }
    }

    #[test]
    fn score_examples() {
        let w = ScoreWeights::default();
        assert_eq!(stationarity_score(&ideal(), &w), 0.0);
        let r = DiagnosticsReport { adf_p: 0.25, ..ideal() };
        assert_relative_eq!(stationarity_score(&r, &w), 0.20, epsilon = 1e-15);
        let r = DiagnosticsReport { lb_p: 0.01, ..ideal() };
        assert_relative_eq!(stationarity_score(&r, &w), 0.40, epsilon = 1e-15);
        let r = DiagnosticsReport { corr_noise_mean: -0.2, corr_noise_disp: 0.1, ..ideal() };
        assert_relative_eq!(stationarity_score(&r, &w), 0.15, epsilon = 1e-15);
    }

    #[test]
    fn step_fraction_counts_jumps() {
        assert_eq!(step_fraction(&[0.0, 0.0, 5.0, 5.0], 1.0), 0.25);
        assert_eq!(step_fraction(&[0.0, 0.1, 0.2, 0.3], 1.0), 0.0);
    }

    #[test]
    fn grid_expansion() {
        let space = SearchSpace {
            beta_mean: vec![BetaChoice::Fixed(1.0), BetaChoice::Fixed(10.0), BetaChoice::Estimated { estimated: 25.0 }],
            beta_disp: vec![1.0, 2.0],
            mode: vec![Mode::Sequential, Mode::Joint],
            ..Default::default()
        };
        let grid = space.grid();
        // (2 fixed x 2 disp + 1 estimated) x 2 modes
        assert_eq!(grid.len(), 10);
        assert!(grid.iter().all(|h| space.contains(h)));
        let json = r#"{"beta_mean": [0.1, 1, {"estimated": 25}], "theta": [0.5, 2]}"#;
        let parsed: SearchSpace = serde_json::from_str(json).unwrap();
        assert_eq!(parsed.grid().len(), 6);
        assert!(serde_json::from_str::<SearchSpace>(r#"{"betta": [1]}"#).is_err());
    }

    #[test]
    fn contains_rejects_outside_values() {
        let space = SearchSpace { gamma_mean: vec![0.1, 1.0], spc_window: vec![5, 9], ..Default::default() };
        let ok = Hyperparameters { gamma_mean: 0.5, spc_window: 9, ..Default::default() };
        assert!(space.contains(&ok));
        assert!(!space.contains(&Hyperparameters { gamma_mean: 2.0, ..ok.clone() }));
        assert!(!space.contains(&Hyperparameters { spc_window: 7, ..ok.clone() }));
        assert!(!space.contains(&Hyperparameters { theta: 3.0, ..ok }));
    }

    fn noise_series(seed: u64, n: usize) -> TimeSeries {
        TimeSeries::new(jitter(seed, n, 1.0)).unwrap()
    }

    #[test]
    fn budget_one_and_errors() {
        let x = noise_series(1, 80);
        let spec = TuningSpec {
            search_space: SearchSpace { gamma_mean: vec![0.5], ..Default::default() },
            budget: 1,
            ..Default::default()
        };
        let r = tune(&x, &spec).unwrap();
        assert_eq!(r.trace.len(), 1);
        assert_eq!(r.best_index, 0);
        assert_eq!(Some(r.best_score), r.trace[0].score);

        let empty = TuningSpec { budget: 5, ..Default::default() };
        assert!(matches!(tune(&x, &empty), Err(Error::Config(_))));
        let small = TuningSpec {
            search_space: SearchSpace { theta: vec![0.5, 1.0, 2.0], ..Default::default() },
            budget: 2,
            ..Default::default()
        };
        assert!(matches!(tune(&x, &small), Err(Error::Config(_))));
    }

    #[test]
    fn all_failures_carry_the_trace() {
        let x = TimeSeries::new(vec![3.0; 30]).unwrap();
        let spec = TuningSpec {
            search_space: SearchSpace { gamma_mean: vec![0.5, 1.0], ..Default::default() },
            budget: 4,
            ..Default::default()
        };
        match tune(&x, &spec) {
            Err(Error::Tuning { trace, .. }) => assert_eq!(trace.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn refinement_stays_in_space_and_is_deterministic() {
        let x = noise_series(5, 100);
        let spec = TuningSpec {
            search_space: SearchSpace {
                base: Hyperparameters { beta_rule: BetaRule::Fixed, ..Default::default() },
                beta_mean: vec![BetaChoice::Fixed(0.5), BetaChoice::Fixed(20.0)],
                gamma_mean: vec![0.1, 2.0],
                ..Default::default()
            },
            budget: 14,
            seeds: vec![1, 2],
            ..Default::default()
        };
        let a = tune(&x, &spec).unwrap();
        let b = tune(&x, &spec).unwrap();
        assert_eq!(a, b);
        assert!(a.trace.len() <= 14);
        assert!(a.trace.iter().any(|e| e.phase == Phase::NelderMead));
        assert!(a.trace.iter().all(|e| spec.search_space.contains(&e.h)));
        let min = a.trace.iter().filter_map(|e| e.score).fold(f64::INFINITY, f64::min);
        assert_eq!(a.best_score, min);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn score_is_non_negative(
            adf_p in 0.001f64..0.999, lb_p in 0.0f64..1.0, kl in 0.0f64..3.0,
            d1 in 0.0f64..2.0, d2 in 0.0f64..2.0, c1 in -1.0f64..1.0, c2 in -1.0f64..1.0,
        ) {
            let r = DiagnosticsReport {
                adf_p, lb_p, kl_to_standard_normal: kl, rolling_mean_drift: d1, rolling_std_drift: d2,
                corr_noise_mean: c1, corr_noise_disp: c2, ..ideal()
            };
            prop_assert!(stationarity_score(&r, &ScoreWeights::default()) >= 0.0);
        }

        #[test]
        fn superset_grid_never_worse(extra in 0.2f64..50.0) {
            let x = noise_series(9, 60);
            let small = SearchSpace {
                base: Hyperparameters { beta_rule: BetaRule::Fixed, ..Default::default() },
                beta_mean: vec![BetaChoice::Fixed(3.9)],
                ..Default::default()
            };
            let mut big = small.clone();
            big.beta_mean.push(BetaChoice::Fixed(extra));
            let spec = |s: SearchSpace| TuningSpec { search_space: s, budget: 2, method: Method::Grid, ..Default::default() };
            let a = tune(&x, &spec(small)).unwrap();
            let b = tune(&x, &spec(big)).unwrap();
            prop_assert!(b.best_score <= a.best_score);
        }
    }
}
