//! The intention-aware trajectory network and its vanilla baseline.
//!
//! Stages: per-agent transformer motion encoding, per-timestep social
//! attention over the occupancy grid, multi-head temporal dependency
//! attention, intention heads, mode-conditioned fusion, a
//! non-autoregressive transformer decode, and a Gaussian output head.

mod checkpoint;
mod forward;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainState};
pub use forward::{
    encode_motion, forward, fuse_and_decode, gaussian_head, intention_heads, social_attention,
    temporal_dependency, vanilla_forward, ForwardPass, TrunkNodes,
};
pub use params::{count_parameters, ModelConfig, ModelKind, ModelParameters, ParamView};
