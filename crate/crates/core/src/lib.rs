//! Estimation of dynamic matrix factor models
//!
//! The model is `Y_t = R F_t C' + E_t` with matrix-autoregressive factors
//! `F_t = A F_{t-1} B' + U_t`. Parameters are estimated by EM, where the
//! E-step is a Kalman smoother on the vectorized state space and the M-step
//! uses closed-form updates. Missing entries and unit-root factors are
//! supported.

pub mod em;
pub mod error;
pub mod kalman;
pub mod linalg;
pub mod metrics;
pub mod mstep;
pub mod params;
pub mod pe;
pub mod series;
pub mod sim;

pub use em::{run_em, run_em_from, EmConfig, EmMode, EmReport};
pub use error::{Error, Result};
pub use params::DmfmParams;
pub use series::MatrixSeries;
