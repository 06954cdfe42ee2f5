//! Limited-memory BFGS with a backtracking (Armijo) line search.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub max_iterations: usize,
    /// Stop when `|Δf| / max(1, |f|)` stays below this for `patience` iterations.
    pub rel_tolerance: f64,
    pub patience: usize,
    pub memory: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { max_iterations: 5000, rel_tolerance: 1e-8, patience: 3, memory: 10 }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Objective value at every accepted iterate, starting with `x0`.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Minimizes `f`, which returns the objective and writes the gradient.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, opts: &LbfgsOptions) -> LbfgsOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut evaluations = 1;
    let mut history = vec![fx];

    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut alpha_buf = vec![0.0; opts.memory];
    let mut d = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut quiet = 0;
    let mut converged = false;
    let mut iterations = 0;

    if !fx.is_finite() {
        return LbfgsOutcome { x, value: fx, iterations, evaluations, converged, history };
    }

    while iterations < opts.max_iterations {
        let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if gmax == 0.0 {
            converged = true;
            break;
        }

        // two-loop recursion
        d.iter_mut().zip(&g).for_each(|(d, g)| *d = -g);
        for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
            let a = rho * dot(s, &d);
            alpha_buf[k] = a;
            d.iter_mut().zip(y).for_each(|(d, y)| *d -= a * y);
        }
        if let Some((s, y, _)) = pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|d| *d *= gamma);
        }
        for (k, (s, y, rho)) in pairs.iter().enumerate() {
            let b = rho * dot(y, &d);
            let a = alpha_buf[k];
            d.iter_mut().zip(s).for_each(|(d, s)| *d += (a - b) * s);
        }

        let mut slope = dot(&g, &d);
        if slope.is_nan() || slope >= 0.0 {
            pairs.clear();
            d.iter_mut().zip(&g).for_each(|(d, g)| *d = -g);
            slope = dot(&g, &d);
        }
        let mut step = if pairs.is_empty() {
            (1.0 / dot(&g, &g).sqrt()).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            x_new.iter_mut().zip(&x).zip(&d).for_each(|((xn, x), d)| *xn = x + step * d);
            let f_new = f(&x_new, &mut g_new);
            evaluations += 1;
            if f_new.is_finite() && f_new <= fx + ARMIJO_C1 * step * slope {
                accepted = Some(f_new);
                break;
            }
            step *= 0.5;
        }

        let Some(f_new) = accepted else {
            if pairs.is_empty() {
                // no decrease even along steepest descent: numerically stationary
                converged = true;
                break;
            }
            pairs.clear();
            continue;
        };

        iterations += 1;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * (dot(&s, &s) * dot(&y, &y)).sqrt() && sy > 0.0 {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }

        let rel = (fx - f_new).abs() / fx.abs().max(1.0);
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        fx = f_new;
        history.push(fx);

        if rel < opts.rel_tolerance {
            quiet += 1;
            if quiet >= opts.patience {
                converged = true;
                break;
            }
        } else {
            quiet = 0;
        }
    }

    LbfgsOutcome { x, value: fx, iterations, evaluations, converged, history }
}
