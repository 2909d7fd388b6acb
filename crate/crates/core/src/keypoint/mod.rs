//! Keypoint detection, cross-instance consistency verification and the
//! propose–verify distillation loop.

mod detect;
mod distill;
pub mod skill_file;
mod verify;

pub use detect::{detect, sample_neighbor_group, DetectionConfig, DetectionResult, NullReason};
pub use distill::{distill, DistillConfig, DistillError, DistillInputs, RoundSummary};
pub use verify::{passes_consistency, verify_consistency, CandidateVerdict, ConsistencyReport};

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KeypointError {
    #[error("scene has no points")]
    EmptyScene,
    #[error("invalid mask weights: {0}")]
    InvalidMask(String),
    #[error("keypoint reference feature row has zero norm")]
    ZeroReference,
    #[error("at least one demonstration scene is required")]
    NoDemonstrations,
    #[error("acceptance factor must lie in [0, 1), got {0}")]
    InvalidDelta(f64),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeypointId(pub u32);

impl std::fmt::Display for KeypointId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "k{}", self.0)
    }
}

/// A reference neighbor: its offset from the keypoint and its features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborRecord {
    pub offset: Vector3<f64>,
    pub visual: Vec<f64>,
    pub geometric: Vec<f64>,
}

/// Anchor point with reference features taken from the seeding scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub id: KeypointId,
    pub ref_position: Vector3<f64>,
    pub ref_visual: Vec<f64>,
    pub ref_geometric: Vec<f64>,
    pub neighbor_group: Vec<NeighborRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Proposal rounds used, including the accepted one.
    pub rounds: u32,
    /// Index of the selected mask among the masks that survived suppression.
    pub mask_index: usize,
    pub passing_fraction: f64,
    pub rejected: Vec<RoundSummary>,
}

/// Accepted keypoints and their matched positions in each demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistilledSkill {
    pub description: String,
    pub keypoints: Vec<Keypoint>,
    /// demonstration index → keypoint → matched world position. Entries exist
    /// exactly where detection succeeded.
    pub matches: BTreeMap<usize, BTreeMap<KeypointId, Vector3<f64>>>,
    pub provenance: Provenance,
}

impl DistilledSkill {
    pub fn visual_dim(&self) -> usize {
        self.keypoints.first().map_or(0, |k| k.ref_visual.len())
    }

    pub fn geometric_dim(&self) -> usize {
        self.keypoints.first().map_or(0, |k| k.ref_geometric.len())
    }

    pub fn keypoint(&self, id: KeypointId) -> Option<&Keypoint> {
        self.keypoints.iter().find(|k| k.id == id)
    }
}
