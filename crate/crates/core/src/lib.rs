//! Highway trajectory prediction with explicit maneuver intentions.
//!
//! The crate covers the full loop: NGSIM-style CSV ingestion, maneuver
//! labeling, grid-structured sample building, an intention-aware transformer
//! with a bivariate Gaussian output head, joint trajectory/maneuver training
//! with an MSE warm-up schedule, per-horizon RMSE evaluation, and an ablation
//! runner over the maneuver-loss weight.
//!
//! Everything runs on CPU in f64. Synthetic highway episodes with known
//! maneuver ground truth make the whole loop testable without the real
//! NGSIM corpus.

pub mod autodiff;
pub mod cli;
pub mod dataset_io;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod objectives;
pub mod pipeline;
pub mod synth;
pub mod training;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    GaussianTrajectory, GridSpec, Lateral, Longitudinal, ManeuverDistribution, ManeuverLabel,
    PredictionOutput, TrajectorySample, VehicleRecord,
};
