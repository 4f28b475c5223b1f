//! Online asymptotically efficient estimation for censored stochastic
//! regression `y_{k+1} = S_k(phi_k^T theta + v_{k+1})` with Gaussian noise.
//!
//! * [`kernel`]: closed-form Gaussian censoring quantities.
//! * [`projection`]: weighted-norm projection onto the parameter ball.
//! * [`estimator`]: the two-step recursion and its snapshots.
//! * [`fisher`]: Fisher information and Cramér–Rao summaries.
//! * [`sim`]: signal generators, baselines and the Monte Carlo runner.

pub mod checks;
pub mod error;
pub mod estimator;
pub mod fisher;
pub mod kernel;
pub mod projection;
pub mod sim;
pub mod throughput;

pub use nalgebra;

pub use error::{Error, ErrorCategory, Result};
pub use estimator::{EstimatorConfig, SlopeWindow, Snapshot, TwoStepEstimator};
pub use fisher::FisherAccumulator;
pub use kernel::{CensoredObservation, NoiseModel, ThresholdSchedule, Thresholds};
pub use sim::{CurveBundle, Experiment, ExperimentConfig};
