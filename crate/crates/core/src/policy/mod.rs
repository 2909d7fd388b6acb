//! Keypoint-conditioned trajectory diffusion: object-relative trajectories,
//! noise schedule, denoiser, training and ancestral sampling.

pub mod checkpoint;
mod condition;
mod model;
pub mod network;
mod schedule;
mod trajectory;

pub use condition::{ConditionEntry, ConditionSet, KeypointObservation};
pub use model::{train, NormalizationStats, PolicyModel, TrainConfig, TrainReport, TrainingPair};
pub use network::{Denoiser, NetConfig};
pub use schedule::{forward_noise, NoiseSchedule, DEFAULT_STEPS};
pub use trajectory::{
    centroid, resample, to_object_frame, to_world_frame, Frame, Pose, TrajectorySample, DEFAULT_HORIZON, POSE_DIM,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("shape mismatch: expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("condition dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("wrong trajectory frame: {0}")]
    FrameMismatch(&'static str),
    #[error("at least one keypoint is required")]
    NoKeypoints,
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(String),
}
