//! Everything around the math: dataset files, phase segmentation, motion
//! planning, end-to-end inference and the synthetic task generator.

pub mod eval;
mod infer;
pub mod io;
mod phases;
mod pipeline;
mod planner;
pub mod synthetic;

pub use infer::{infer, predict_world, InferConfig, InferInputs, InferencePlan, SampleVerdict};
pub use io::{Demonstration, SkillBundle};
pub use phases::{segment_phases, PhaseSplit, DEFAULT_PHASE_THRESHOLD};
pub use pipeline::{
    detect_keypoints, distill_bundle, featurize, load_scene_features, mask_weights, training_pairs, FeatureConfig,
};
pub use planner::{birrt_plan, path_is_free, Aabb, PlanError, PlannerConfig, SceneWorld};

use thiserror::Error;

use crate::features::FeatureError;
use crate::geometry::GeometryError;
use crate::keypoint::skill_file::SkillFileError;
use crate::keypoint::{DistillError, KeypointError};
use crate::policy::PolicyError;
use crate::proposal::ProposalError;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("malformed file {0}")]
    Format(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no keypoint was detected in the scene")]
    AllKeypointsNull,
    #[error("none of the {} sampled trajectories is reachable", .0.len())]
    Exhausted(Vec<SampleVerdict>),
    #[error("model and skill disagree: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Keypoint(#[from] KeypointError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Proposal(#[from] ProposalError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    SkillFile(#[from] SkillFileError),
}
