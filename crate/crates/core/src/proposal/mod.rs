//! Coarse-to-fine region proposal: grid overlay, backend queries, mask
//! generation and selection.

pub mod backend;
mod font;
pub mod grid;
pub mod masks;
pub mod parse;
pub mod remote;
pub mod replay;
pub mod scripted;
pub mod transcript;

use thiserror::Error;

pub use backend::{select_mask, MaskRequest, MaskSelector, ProposalBackend, RegionProposal, RegionProposer, RegionRequest};
pub use grid::{overlay_grid, query_points_for_cells, CellRect, GridLayout, GridSpec};
pub use masks::{mask_iou, nms_masks, overlay_masks, FileMaskStore, LabelMapSegmenter, MaskCandidate, MaskGenerator};
pub use parse::ParseError;
pub use remote::{RemoteBackend, RemoteConfig};
pub use replay::ReplayBackend;
pub use scripted::{InjectedFailure, Scenario, ScenarioEntry, ScriptedBackend};
pub use transcript::{RequestKind, Transcript, TranscriptRecord};

#[derive(Debug, Error)]
pub enum ProposalError {
    #[error("grid too fine: {0}")]
    SpecTooFine(String),
    #[error("unknown grid label {0:?}")]
    UnknownLabel(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("query point ({0}, {1}) lies outside the image")]
    QueryOutOfBounds(u32, u32),
    #[error("no precomputed mask for {0}")]
    MissingMaskFile(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("unparseable backend response: {0}")]
    Parse(#[from] ParseError),
    #[error("segmenter produced no masks")]
    NoMasks,
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("transcript: {0}")]
    Transcript(String),
    #[error("io: {0}")]
    Io(String),
}
