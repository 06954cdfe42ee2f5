//! Smooth surrogates used inside the optimizer.

/// Pseudo-Huber surrogate of `|v|`: `δ (sqrt(1 + (v/δ)²) - 1)`.
///
/// Even, convex, zero at the origin, and within `δ` of `|v|` everywhere.
pub fn smooth_abs(v: f64, delta: f64) -> f64 {
    let r = v / delta;
    // δ (sqrt(1+r²) - 1) = δ r² / (sqrt(1+r²) + 1), stable for small r
    delta * r * r / ((1.0 + r * r).sqrt() + 1.0)
}

/// Derivative of [`smooth_abs`]: `(v/δ) / sqrt(1 + (v/δ)²)`.
pub fn smooth_abs_grad(v: f64, delta: f64) -> f64 {
    let r = v / delta;
    r / (1.0 + r * r).sqrt()
}

/// `ln(1 + e^u)` without overflow.
pub fn softplus(u: f64) -> f64 {
    if u > 30.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// Logistic function, the derivative of [`softplus`].
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}
