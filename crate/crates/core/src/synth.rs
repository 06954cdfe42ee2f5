//! Synthetic series with known mean, dispersion and noise.
//!
//! Time indices in effect descriptors are 1-based, matching how the
//! scenarios are usually described ("an outlier at t = 50").

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::series::{TimeSeries, MIN_SERIES_LEN};

/// Identity of the noise generator, recorded next to generated data.
pub const PRNG_IDENTITY: &str = "rand_chacha::ChaCha8Rng 0.9 seed_from_u64 + rand_distr::StandardNormal 0.5 (ziggurat)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Effect {
    /// Adds `magnitude` to the mean at a single point.
    Outlier { t: usize, magnitude: f64 },
    /// Adds `delta` from `t_start` on.
    MeanShift { t_start: usize, delta: f64 },
    /// Adds `slope (t - t_start)` inside the window and holds the end level after it.
    LinearTrend { t_start: usize, t_end: usize, slope: f64 },
    /// Adds `amplitude sin(2π (t - t_start) / period)` inside the window.
    Cycle { t_start: usize, t_end: usize, amplitude: f64, period: f64 },
    /// Multiplies the dispersion by `factor` from `t_start` on.
    VarianceShift { t_start: usize, factor: f64 },
    /// Multiplies the dispersion by a factor rising linearly from 1 at
    /// `t_start` to `factor_end` at `t_end`, held afterwards.
    VarianceTrend { t_start: usize, t_end: usize, factor_end: f64 },
}

impl Effect {
    fn validate(&self, len: usize) -> Result<()> {
        let in_range = |t: usize| (1..=len).contains(&t);
        let window = |a: usize, b: usize| in_range(a) && in_range(b) && a <= b;
        let ok = match *self {
            Effect::Outlier { t, magnitude } => in_range(t) && magnitude.is_finite(),
            Effect::MeanShift { t_start, delta } => in_range(t_start) && delta.is_finite(),
            Effect::LinearTrend { t_start, t_end, slope } => window(t_start, t_end) && slope.is_finite(),
            Effect::Cycle { t_start, t_end, amplitude, period } => {
                window(t_start, t_end) && amplitude.is_finite() && period.is_finite() && period > 0.0
            }
            Effect::VarianceShift { t_start, factor } => in_range(t_start) && factor.is_finite() && factor > 0.0,
            Effect::VarianceTrend { t_start, t_end, factor_end } => {
                window(t_start, t_end) && factor_end.is_finite() && factor_end > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            invalid(format!("effect {self:?} is out of range for a series of length {len}"))
        }
    }

    /// Additive mean contribution at 1-based time `t`.
    fn mean_at(&self, t: usize) -> f64 {
        match *self {
            Effect::Outlier { t: at, magnitude } if t == at => magnitude,
            Effect::MeanShift { t_start, delta } if t >= t_start => delta,
            Effect::LinearTrend { t_start, t_end, slope } if t >= t_start => slope * (t.min(t_end) - t_start) as f64,
            Effect::Cycle { t_start, t_end, amplitude, period } if (t_start..=t_end).contains(&t) => {
                amplitude * (std::f64::consts::TAU * (t - t_start) as f64 / period).sin()
            }
            _ => 0.0,
        }
    }

    /// Multiplicative dispersion factor at 1-based time `t`.
    fn disp_factor_at(&self, t: usize) -> f64 {
        match *self {
            Effect::VarianceShift { t_start, factor } if t >= t_start => factor,
            Effect::VarianceTrend { t_start, t_end, factor_end } if t >= t_start => {
                if t_end == t_start {
                    factor_end
                } else {
                    let frac = (t.min(t_end) - t_start) as f64 / (t_end - t_start) as f64;
                    1.0 + (factor_end - 1.0) * frac
                }
            }
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub length: usize,
    pub base_mean: f64,
    pub base_sigma: f64,
    #[serde(default)]
    pub effects: Vec<Effect>,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.length < MIN_SERIES_LEN {
            return invalid(format!("scenario length must be at least {MIN_SERIES_LEN}, got {}", self.length));
        }
        if !self.base_mean.is_finite() || !(self.base_sigma.is_finite() && self.base_sigma > 0.0) {
            return invalid("scenario needs a finite base_mean and base_sigma > 0");
        }
        self.effects.iter().try_for_each(|e| e.validate(self.length))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSeries {
    pub x: TimeSeries,
    pub true_mean: Vec<f64>,
    pub true_disp: Vec<f64>,
    pub true_noise: Vec<f64>,
}

/// Draws one realization of `spec`; identical specs give identical output.
pub fn generate(spec: &ScenarioSpec) -> Result<SyntheticSeries> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let true_noise: Vec<f64> = (0..spec.length).map(|_| StandardNormal.sample(&mut rng)).collect();
    // contributions are combined before the base so effect order does not matter
    let true_mean: Vec<f64> = (1..=spec.length)
        .map(|t| spec.base_mean + spec.effects.iter().map(|e| e.mean_at(t)).sum::<f64>())
        .collect();
    let true_disp: Vec<f64> = (1..=spec.length)
        .map(|t| spec.base_sigma * spec.effects.iter().map(|e| e.disp_factor_at(t)).product::<f64>())
        .collect();
    let x = true_mean
        .iter()
        .zip(&true_disp)
        .zip(&true_noise)
        .map(|((m, s), e)| m + s * e)
        .collect();
    Ok(SyntheticSeries { x: TimeSeries::new(x)?, true_mean, true_disp, true_noise })
}

pub const SCENARIO_LENGTH: usize = 200;

/// The canonical suite: seven named scenarios at length 200, base N(0, 1).
pub fn builtin_scenarios() -> BTreeMap<String, ScenarioSpec> {
    let base = |effects: Vec<Effect>| ScenarioSpec {
        length: SCENARIO_LENGTH,
        base_mean: 0.0,
        base_sigma: 1.0,
        effects,
        seed: 0,
    };
    let mut map = BTreeMap::new();
    map.insert("outlier".into(), base(vec![Effect::Outlier { t: 100, magnitude: 5.0 }]));
    map.insert("mean-shift".into(), base(vec![Effect::MeanShift { t_start: 101, delta: 5.0 }]));
    map.insert(
        "cycle".into(),
        base(vec![Effect::Cycle { t_start: 51, t_end: 150, amplitude: 2.0, period: 20.0 }]),
    );
    map.insert(
        "steady-then-trend".into(),
        base(vec![Effect::LinearTrend { t_start: 101, t_end: 200, slope: 0.05 }]),
    );
    map.insert("variance-shift".into(), base(vec![Effect::VarianceShift { t_start: 101, factor: 3.0 }]));
    map.insert(
        "variance-trend".into(),
        base(vec![Effect::VarianceTrend { t_start: 101, t_end: 200, factor_end: 3.0 }]),
    );
    map.insert(
        "composite".into(),
        base(vec![
            Effect::Outlier { t: 25, magnitude: 5.0 },
            Effect::Cycle { t_start: 40, t_end: 80, amplitude: 2.0, period: 20.0 },
            Effect::MeanShift { t_start: 100, delta: 5.0 },
            Effect::LinearTrend { t_start: 130, t_end: 170, slope: 0.05 },
            Effect::VarianceTrend { t_start: 150, t_end: 200, factor_end: 3.0 },
        ]),
    );
    map
}

/// Looks up a scenario by name; the error lists the valid names.
pub fn scenario(name: &str) -> Result<ScenarioSpec> {
    let all = builtin_scenarios();
    match all.get(name) {
        Some(s) => Ok(s.clone()),
        None => invalid(format!(
            "unknown scenario '{name}', expected one of: {}",
            all.keys().cloned().collect::<Vec<_>>().join(", ")
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::extract_noise;
    use crate::series::DualSignal;
    use crate::spc::{z_values, ZMode};
    use crate::stats::{mean, pearson};
    use proptest::prelude::*;

    fn plain(len: usize, seed: u64) -> ScenarioSpec {
        ScenarioSpec { length: len, base_mean: 10.0, base_sigma: 2.0, effects: vec![], seed }
    }

    #[test]
    fn no_effects_is_pure_noise() {
        let s = generate(&plain(50, 3)).unwrap();
        assert!(s.true_mean.iter().all(|m| *m == 10.0));
        assert!(s.true_disp.iter().all(|d| *d == 2.0));
        for t in 0..50 {
            assert_eq!(s.x.values()[t], 10.0 + 2.0 * s.true_noise[t]);
        }
    }

    #[test]
    fn reconstruction_and_truth_consistency() {
        for spec in builtin_scenarios().values() {
            let s = generate(&spec.clone().with_seed(9)).unwrap();
            for t in 0..s.x.len() {
                assert_eq!(s.x.values()[t], s.true_mean[t] + s.true_disp[t] * s.true_noise[t]);
            }
            let signal = DualSignal::new(s.true_mean.clone(), s.true_disp.clone()).unwrap();
            let eps = extract_noise(&s.x, &signal, 1e-12).unwrap();
            let r = pearson(eps.values(), &s.true_noise).unwrap();
            assert!((r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn outlier_is_out_of_control() {
        // a 5-sigma spike against a 7-point window estimate exceeds Z = 3 most
        // of the time; the window's own noise makes it a rate, not a certainty
        let hits = (0..200u64)
            .filter(|&seed| {
                let spec = ScenarioSpec {
                    length: 100,
                    base_mean: 10.0,
                    base_sigma: 1.0,
                    effects: vec![Effect::Outlier { t: 50, magnitude: 5.0 }],
                    seed,
                };
                let s = generate(&spec).unwrap();
                z_values(&s.x, 7, ZMode::Preceding).unwrap().values[49].unwrap() > 3.0
            })
            .count();
        assert!(hits >= 160, "{hits}/200");
    }

    #[test]
    fn suite_definition() {
        let all = builtin_scenarios();
        assert_eq!(all.len(), 7);
        assert!(all.values().all(|s| s.length == 200));
        let v = generate(&all["variance-shift"]).unwrap();
        let ratio = mean(&v.true_disp[100..]) / mean(&v.true_disp[..100]);
        assert_eq!(ratio, 3.0);
        let tr = generate(&all["variance-trend"]).unwrap();
        assert_eq!(tr.true_disp[99], 1.0);
        assert_eq!(tr.true_disp[199], 3.0);
    }

    #[test]
    fn determinism_and_unknown_name() {
        let a = generate(&scenario("composite").unwrap().with_seed(4)).unwrap();
        let b = generate(&scenario("composite").unwrap().with_seed(4)).unwrap();
        assert_eq!(a, b);
        let err = scenario("nope").unwrap_err().to_string();
        assert!(err.contains("mean-shift") && err.contains("variance-trend"));
    }

    #[test]
    fn out_of_range_window_rejected() {
        let mut spec = plain(50, 0);
        spec.effects.push(Effect::MeanShift { t_start: 51, delta: 1.0 });
        assert!(generate(&spec).is_err());
        spec.effects[0] = Effect::LinearTrend { t_start: 30, t_end: 20, slope: 1.0 };
        assert!(generate(&spec).is_err());
        spec.effects[0] = Effect::Outlier { t: 0, magnitude: 1.0 };
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = builtin_scenarios()["composite"].clone();
        let text = serde_json::to_string(&spec).unwrap();
        let back: ScenarioSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(spec, back);
    }

    fn effect() -> impl Strategy<Value = Effect> {
        prop_oneof![
            (1usize..=60, -5.0f64..5.0).prop_map(|(t, magnitude)| Effect::Outlier { t, magnitude }),
            (1usize..=60, -5.0f64..5.0).prop_map(|(t_start, delta)| Effect::MeanShift { t_start, delta }),
            (1usize..=30, 0usize..30, -0.2f64..0.2)
                .prop_map(|(a, l, slope)| Effect::LinearTrend { t_start: a, t_end: a + l, slope }),
            (1usize..=30, 0usize..30, 0.0f64..3.0, 2.0f64..30.0).prop_map(|(a, l, amplitude, period)| {
                Effect::Cycle { t_start: a, t_end: a + l, amplitude, period }
            }),
            (1usize..=60, 0.2f64..5.0).prop_map(|(t_start, factor)| Effect::VarianceShift { t_start, factor }),
            (1usize..=30, 0usize..30, 0.2f64..5.0)
                .prop_map(|(a, l, factor_end)| Effect::VarianceTrend { t_start: a, t_end: a + l, factor_end }),
        ]
    }

    proptest! {
        #[test]
        fn effects_commute(a in effect(), b in effect(), seed in 0u64..1000) {
            let mut ab = plain(60, seed);
            ab.effects = vec![a.clone(), b.clone()];
            let mut ba = plain(60, seed);
            ba.effects = vec![b, a];
            prop_assert_eq!(generate(&ab).unwrap(), generate(&ba).unwrap());
        }
    }
}
