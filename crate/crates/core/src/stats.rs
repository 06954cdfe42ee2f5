//! Small descriptive statistics and distribution tails shared across modules.

use statrs::function::gamma;

/// Smallest p-value ever reported; keeps `exp(-k p^m)` and cutoff logic finite.
pub const P_FLOOR: f64 = 1e-300;

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance (divide by n).
pub fn variance_pop(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
}

pub fn std_pop(x: &[f64]) -> f64 {
    variance_pop(x).sqrt()
}

/// Sample standard deviation (divide by n - 1); 0 for fewer than two points.
pub fn std_sample(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    debug_assert_eq!(a.len(), b.len());
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Two-sided standard-normal tail `2 (1 - Phi(|z|))`, clamped to `[P_FLOOR, 1]`.
///
/// Evaluated as `erfc(|z| / sqrt 2)` so the far tail keeps full relative accuracy.
pub fn normal_two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return 1.0;
    }
    let z = z.abs();
    if z.is_infinite() {
        return P_FLOOR;
    }
    libm::erfc(z / std::f64::consts::SQRT_2).clamp(P_FLOOR, 1.0)
}

/// Standard-normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Chi-square survival function `P(X > q)` with `df` degrees of freedom.
pub fn chi2_sf(q: f64, df: usize) -> f64 {
    if q <= 0.0 {
        return 1.0;
    }
    gamma::gamma_ur(df as f64 / 2.0, q / 2.0).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn normal_tails() {
        assert_eq!(normal_two_sided_p(0.0), 1.0);
        // 2(1 - Phi(3)) = 0.0026997960632601866
        assert_relative_eq!(normal_two_sided_p(3.0), 0.002_699_796_063_260_189, max_relative = 1e-12);
        // 2(1 - Phi(6)) = 1.9731752900753963e-9
        assert_relative_eq!(normal_two_sided_p(6.0), 1.973_175_290_075_396e-9, max_relative = 1e-12);
        assert_eq!(normal_two_sided_p(f64::INFINITY), P_FLOOR);
        assert_eq!(normal_two_sided_p(50.0), P_FLOOR);
        assert_relative_eq!(normal_cdf(1.959_963_984_540_054), 0.975, max_relative = 1e-12);
    }

    #[test]
    fn chi2_tail() {
        // df=2 closed form: exp(-q/2)
        assert_relative_eq!(chi2_sf(3.0, 2), (-1.5f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(chi2_sf(18.307_038_053_275_146, 10), 0.05, max_relative = 1e-9);
        assert_eq!(chi2_sf(0.0, 5), 1.0);
    }

    #[test]
    fn pearson_basics() {
        assert_relative_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 1.0);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_none());
    }
}
