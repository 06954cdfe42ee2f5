//! The hyperparameter vector controlling a decomposition.

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::loss::{FitKind, RegKind};
use crate::spc::{WeightScheme, ZMode};

/// Whether the mean and dispersion are learned one after the other or together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Sequential,
    Joint,
}

/// How the first-difference multipliers are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum BetaRule {
    /// Use `beta_mean` and `beta_disp` as given.
    Fixed,
    /// Estimate both multipliers from the data, scaled by `c_beta`.
    Estimated { c_beta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparameters {
    pub mode: Mode,
    pub beta_mean: f64,
    pub beta_disp: f64,
    pub gamma_mean: f64,
    pub gamma_disp: f64,
    /// Weight of the dispersion loss in joint mode.
    pub theta: f64,
    /// SPC window length `n`.
    pub spc_window: usize,
    /// Binary-weight cutoff `p*`.
    pub p_cutoff: f64,
    pub weight_scheme: WeightScheme,
    pub fit_kind: FitKind,
    pub reg_kind: RegKind,
    pub z_mode: ZMode,
    pub beta_rule: BetaRule,
    /// Apply the SPC weights to the dispersion regularization too.
    pub disp_weighting: bool,
    /// Pseudo-Huber width; `None` means relative to the series scale.
    pub huber_delta: Option<f64>,
    /// Lower bound of the dispersion signal; `None` means relative to the series scale.
    pub s_floor: Option<f64>,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            mode: Mode::Sequential,
            beta_mean: 3.9,
            beta_disp: 3.9,
            gamma_mean: 0.5,
            gamma_disp: 0.5,
            theta: 1.0,
            spc_window: 7,
            p_cutoff: 0.0025,
            weight_scheme: WeightScheme::Binary,
            fit_kind: FitKind::Rmse,
            reg_kind: RegKind::Mae,
            z_mode: ZMode::Preceding,
            beta_rule: BetaRule::Estimated { c_beta: 25.0 },
            disp_weighting: true,
            huber_delta: None,
            s_floor: None,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("beta_mean", self.beta_mean),
            ("beta_disp", self.beta_disp),
            ("gamma_mean", self.gamma_mean),
            ("gamma_disp", self.gamma_disp),
            ("theta", self.theta),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return config(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.spc_window < 2 {
            return config(format!("spc_window must be at least 2, got {}", self.spc_window));
        }
        if !(self.p_cutoff > 0.0 && self.p_cutoff < 1.0) {
            return config(format!("p_cutoff must lie in (0, 1), got {}", self.p_cutoff));
        }
        self.weight_scheme.validate()?;
        if let BetaRule::Estimated { c_beta } = self.beta_rule {
            if !(c_beta.is_finite() && c_beta > 0.0) {
                return config(format!("c_beta must be positive, got {c_beta}"));
            }
        }
        for (name, v) in [("huber_delta", self.huber_delta), ("s_floor", self.s_floor)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return config(format!("{name} must be positive, got {v}"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Hyperparameters::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            Hyperparameters { beta_mean: -1.0, ..Default::default() },
            Hyperparameters { theta: f64::NAN, ..Default::default() },
            Hyperparameters { spc_window: 1, ..Default::default() },
            Hyperparameters { p_cutoff: 1.0, ..Default::default() },
            Hyperparameters { beta_rule: BetaRule::Estimated { c_beta: 0.0 }, ..Default::default() },
            Hyperparameters { s_floor: Some(0.0), ..Default::default() },
            Hyperparameters {
                weight_scheme: WeightScheme::Transformed { k: -1.0, m: 2.0 },
                ..Default::default()
            },
        ];
        for h in bad {
            assert!(h.validate().is_err(), "{h:?}");
        }
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let h = Hyperparameters {
            mode: Mode::Joint,
            weight_scheme: WeightScheme::Transformed { k: 9.0, m: 2.0 },
            beta_rule: BetaRule::Fixed,
            ..Default::default()
        };
        let s = serde_json::to_string(&h).unwrap();
        let back: Hyperparameters = serde_json::from_str(&s).unwrap();
        assert_eq!(h, back);
        assert!(serde_json::from_str::<Hyperparameters>(r#"{"bogus": 1}"#).is_err());
        let partial: Hyperparameters = serde_json::from_str(r#"{"theta": 0.25}"#).unwrap();
        assert_eq!(partial.theta, 0.25);
        assert_eq!(partial.spc_window, 7);
    }
}
