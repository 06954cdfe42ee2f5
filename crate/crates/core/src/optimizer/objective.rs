//! Smoothed objectives and their analytic gradients.
//!
//! Every absolute value is replaced by the pseudo-Huber surrogate, square
//! roots of mean squares by `sqrt(v + δ²) - δ`, and maxima by a log-sum-exp
//! with temperature `δ`. The dispersion signal is parameterized as
//! `s = softplus(u) + s_floor`.

use crate::loss::{FitKind, RegKind};

use super::smooth::{sigmoid, smooth_abs, smooth_abs_grad, softplus};

/// One penalized fit: `fit_factor * fit(target, signal) + beta * reg(signal) + gamma * smooth(signal)`.
#[derive(Debug, Clone, Copy)]
pub struct TermSpec {
    pub beta: f64,
    pub gamma: f64,
    pub fit: FitKind,
    pub reg: RegKind,
    pub delta: f64,
    /// Multiplies the fitting term; used to keep second-order metrics exact
    /// when the optimizer works on rescaled data.
    pub fit_factor: f64,
}

/// Smoothed root of a non-negative mean: `sqrt(v + δ²) - δ`, and its derivative in `v`.
fn smooth_root(v: f64, delta: f64) -> (f64, f64) {
    let r = (v + delta * delta).sqrt();
    (r - delta, 0.5 / r)
}

/// Adds the fitting gradient with respect to the residual `e = signal - target` into `ge`.
fn fit_term(e: &[f64], kind: FitKind, delta: f64, ge: &mut [f64]) -> f64 {
    let n = e.len() as f64;
    match kind {
        FitKind::Rmse => {
            let v = e.iter().map(|e| e * e).sum::<f64>() / n;
            let (val, dv) = smooth_root(v, delta);
            for (g, e) in ge.iter_mut().zip(e) {
                *g = dv * 2.0 * e / n;
            }
            val
        }
        FitKind::Mse => {
            for (g, e) in ge.iter_mut().zip(e) {
                *g = 2.0 * e / n;
            }
            e.iter().map(|e| e * e).sum::<f64>() / n
        }
        FitKind::Sse => {
            for (g, e) in ge.iter_mut().zip(e) {
                *g = 2.0 * e;
            }
            e.iter().map(|e| e * e).sum::<f64>()
        }
        FitKind::Mae => {
            for (g, e) in ge.iter_mut().zip(e) {
                *g = smooth_abs_grad(*e, delta) / n;
            }
            e.iter().map(|e| smooth_abs(*e, delta)).sum::<f64>() / n
        }
        FitKind::Maxae | FitKind::Maxse => {
            // log-sum-exp over smoothed absolute errors
            let a: Vec<f64> = e.iter().map(|e| smooth_abs(*e, delta)).collect();
            let top = a.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
            let z: f64 = a.iter().map(|v| ((v - top) / delta).exp()).sum();
            let lse = top + delta * z.ln();
            let outer = if kind == FitKind::Maxse { 2.0 * lse } else { 1.0 };
            for ((g, e), a) in ge.iter_mut().zip(e).zip(&a) {
                let soft = ((a - top) / delta).exp() / z;
                *g = outer * soft * smooth_abs_grad(*e, delta);
            }
            if kind == FitKind::Maxse {
                lse * lse
            } else {
                lse
            }
        }
    }
}

/// Value of the penalized fit; writes `d/d signal` into `g_signal` and, if
/// given, `d/d target` into `g_target`.
pub fn penalized(
    target: &[f64],
    signal: &[f64],
    w: &[f64],
    spec: &TermSpec,
    g_signal: &mut [f64],
    g_target: Option<&mut [f64]>,
) -> f64 {
    let n = signal.len();
    debug_assert!(n >= 3 && target.len() == n && w.len() == n && g_signal.len() == n);
    let delta = spec.delta;

    let e: Vec<f64> = signal.iter().zip(target).map(|(s, t)| s - t).collect();
    let fit = fit_term(&e, spec.fit, delta, g_signal);
    for g in g_signal.iter_mut() {
        *g *= spec.fit_factor;
    }
    if let Some(gt) = g_target {
        for (t, s) in gt.iter_mut().zip(g_signal.iter()) {
            *t = -s;
        }
    }
    let mut value = spec.fit_factor * fit;

    if spec.beta != 0.0 {
        let denom = (n - 1) as f64;
        match spec.reg {
            RegKind::Mae => {
                let mut reg = 0.0;
                for t in 1..n {
                    let d = signal[t] - signal[t - 1];
                    reg += w[t] * smooth_abs(d, delta);
                    let gd = spec.beta * w[t] * smooth_abs_grad(d, delta) / denom;
                    g_signal[t] += gd;
                    g_signal[t - 1] -= gd;
                }
                value += spec.beta * reg / denom;
            }
            RegKind::Rmse => {
                let v = (1..n)
                    .map(|t| w[t] * (signal[t] - signal[t - 1]).powi(2))
                    .sum::<f64>()
                    / denom;
                let (reg, dv) = smooth_root(v, delta);
                for t in 1..n {
                    let d = signal[t] - signal[t - 1];
                    let gd = spec.beta * dv * 2.0 * w[t] * d / denom;
                    g_signal[t] += gd;
                    g_signal[t - 1] -= gd;
                }
                value += spec.beta * reg;
            }
        }
    }

    if spec.gamma != 0.0 {
        let denom = (n - 2) as f64;
        let mut sm = 0.0;
        for t in 2..n {
            let d2 = signal[t] - 2.0 * signal[t - 1] + signal[t - 2];
            sm += w[t] * smooth_abs(d2, delta);
            let gd = spec.gamma * w[t] * smooth_abs_grad(d2, delta) / denom;
            g_signal[t] += gd;
            g_signal[t - 1] -= 2.0 * gd;
            g_signal[t - 2] += gd;
        }
        value += spec.gamma * sm / denom;
    }
    value
}

/// Dispersion `softplus(u) + s_floor`.
pub fn dispersion_from(u: &[f64], s_floor: f64) -> Vec<f64> {
    u.iter().map(|u| softplus(*u) + s_floor).collect()
}

/// The smoothed objectives of one decomposition problem.
#[derive(Debug, Clone)]
pub struct SmoothedObjective<'a> {
    pub x: &'a [f64],
    pub w_mean: &'a [f64],
    pub w_disp: &'a [f64],
    pub mean: TermSpec,
    pub disp: TermSpec,
    pub theta: f64,
    pub s_floor: f64,
}

impl SmoothedObjective<'_> {
    /// Mean-stage objective over `m`.
    pub fn mean_value_grad(&self, m: &[f64], grad: &mut [f64]) -> f64 {
        penalized(self.x, m, self.w_mean, &self.mean, grad, None)
    }

    /// Dispersion-stage objective over `u` against fixed absolute residuals.
    pub fn disp_value_grad(&self, r_abs: &[f64], u: &[f64], grad: &mut [f64]) -> f64 {
        let s = dispersion_from(u, self.s_floor);
        let v = penalized(r_abs, &s, self.w_disp, &self.disp, grad, None);
        for (g, u) in grad.iter_mut().zip(u) {
            *g *= sigmoid(*u);
        }
        v
    }

    /// Joint objective over `params = [m; u]`.
    pub fn joint_value_grad(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.x.len();
        let (m, u) = params.split_at(n);
        let (gm, gu) = grad.split_at_mut(n);
        let mut value = penalized(self.x, m, self.w_mean, &self.mean, gm, None);
        if self.theta == 0.0 {
            gu.iter_mut().for_each(|g| *g = 0.0);
            return value;
        }
        let delta = self.disp.delta;
        let resid: Vec<f64> = self.x.iter().zip(m).map(|(x, m)| x - m).collect();
        let target: Vec<f64> = resid.iter().map(|r| smooth_abs(*r, delta)).collect();
        let s = dispersion_from(u, self.s_floor);
        let mut g_target = vec![0.0; n];
        value += self.theta * penalized(&target, &s, self.w_disp, &self.disp, gu, Some(&mut g_target));
        for t in 0..n {
            // d target / d m = -smooth_abs'(x - m)
            gm[t] -= self.theta * g_target[t] * smooth_abs_grad(resid[t], delta);
            gu[t] *= self.theta * sigmoid(u[t]);
        }
        value
    }
}
