//! Dual-signal decomposition of stochastic time series.
//!
//! A series `x_t` is split into a mean signal `m_t`, a non-negative
//! dispersion signal `s_t` and isolated noise `ε_t` with
//! `x_t = m_t + s_t ε_t`. Both signals are learned by minimizing a fitting
//! term plus weighted first- and second-difference penalties, where the
//! weights come from a local individuals control chart so that outliers,
//! shifts and other special patterns are not smoothed away.

pub mod cli;
pub mod diagnostics;
pub mod dualspace;
pub mod error;
pub mod loss;
pub mod optimizer;
pub mod params;
pub mod series;
pub mod spc;
pub mod stats;
pub mod synth;
pub mod tuning;

pub use error::{Error, Result};
pub use params::{BetaRule, Hyperparameters, Mode};
pub use series::{DualSignal, NoiseSeries, TimeSeries};
