//! Per-point feature fields: FPFH geometry, a pluggable visual channel and
//! the weighted cosine score used for correspondence matching.

pub mod fpfh;
mod provider;
pub mod sidecar;
mod similarity;

pub use fpfh::{compute_fpfh, FpfhField, FPFH_DIM};
pub use provider::{FileProvider, ProceduralProvider, VisualFeatureProvider, DEFAULT_VISUAL_DIM};
pub use similarity::{combined_similarity, cosine_similarity, SimilarityWeights};
pub(crate) use similarity::{cosine_with_norms, norm};

use thiserror::Error;

use crate::geometry::{PointCloud, RgbdImage};

pub const DEFAULT_FPFH_RADIUS: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("zero-norm feature vector")]
    ZeroVector,
    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("similarity weights must be finite and non-negative")]
    InvalidWeights,
    #[error("feature file not found: {0}")]
    MissingFeatureFile(String),
    #[error("feature rows ({actual}) do not match cloud size ({expected})")]
    IndexMismatch { expected: usize, actual: usize },
    #[error("non-finite feature value at point {0}")]
    NonFinite(usize),
    #[error("malformed feature file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Visual and geometric rows aligned index-for-index with a cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureField {
    visual_dim: usize,
    visual: Vec<f64>,
    geometric: Vec<f64>,
    degenerate: Vec<bool>,
}

impl FeatureField {
    pub fn new(visual_dim: usize, visual: Vec<f64>, fpfh: FpfhField) -> Result<Self, FeatureError> {
        let n = fpfh.len();
        if visual_dim == 0 {
            return Err(FeatureError::DimensionMismatch {
                expected: 1,
                actual: 0,
            });
        }
        if visual.len() != n * visual_dim {
            return Err(FeatureError::IndexMismatch {
                expected: n,
                actual: visual.len() / visual_dim,
            });
        }
        if let Some(bad) = visual.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite(bad / visual_dim));
        }
        if let Some(bad) = fpfh.rows.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite(bad / FPFH_DIM));
        }
        Ok(Self {
            visual_dim,
            visual,
            geometric: fpfh.rows,
            degenerate: fpfh.degenerate,
        })
    }

    pub fn len(&self) -> usize {
        self.degenerate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degenerate.is_empty()
    }

    pub fn visual_dim(&self) -> usize {
        self.visual_dim
    }

    pub fn visual_row(&self, i: usize) -> &[f64] {
        &self.visual[i * self.visual_dim..(i + 1) * self.visual_dim]
    }

    pub fn geometric_row(&self, i: usize) -> &[f64] {
        &self.geometric[i * FPFH_DIM..(i + 1) * FPFH_DIM]
    }

    /// Point whose FPFH row is zero (no neighbors or degenerate normal).
    pub fn is_degenerate(&self, i: usize) -> bool {
        self.degenerate[i]
    }

    pub fn visual_values(&self) -> &[f64] {
        &self.visual
    }
}

/// A point cloud together with its feature field and cached row norms.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturedScene {
    pub cloud: PointCloud,
    field: FeatureField,
    visual_norms: Vec<f64>,
    geometric_norms: Vec<f64>,
}

impl FeaturedScene {
    pub fn new(cloud: PointCloud, field: FeatureField) -> Result<Self, FeatureError> {
        if cloud.len() != field.len() {
            return Err(FeatureError::IndexMismatch {
                expected: cloud.len(),
                actual: field.len(),
            });
        }
        let visual_norms = (0..field.len()).map(|i| norm(field.visual_row(i))).collect();
        let geometric_norms = (0..field.len()).map(|i| norm(field.geometric_row(i))).collect();
        Ok(Self {
            cloud,
            field,
            visual_norms,
            geometric_norms,
        })
    }

    /// Computes both channels for `cloud`.
    pub fn build(
        image: Option<&RgbdImage>,
        cloud: PointCloud,
        provider: &dyn VisualFeatureProvider,
        fpfh_radius: f64,
    ) -> Result<Self, FeatureError> {
        let visual = provider.features_for_scene(image, &cloud)?;
        let fpfh = compute_fpfh(&cloud, fpfh_radius);
        let field = FeatureField::new(provider.dim(), visual, fpfh)?;
        Self::new(cloud, field)
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    pub fn field(&self) -> &FeatureField {
        &self.field
    }

    pub fn visual_norm(&self, i: usize) -> f64 {
        self.visual_norms[i]
    }

    pub fn geometric_norm(&self, i: usize) -> f64 {
        self.geometric_norms[i]
    }

    /// Scene translated rigidly; features are carried over unchanged.
    pub fn translated(&self, offset: &nalgebra::Vector3<f64>) -> FeaturedScene {
        let t = crate::geometry::RigidTransform::from_translation(*offset);
        FeaturedScene {
            cloud: self.cloud.transformed(&t),
            field: self.field.clone(),
            visual_norms: self.visual_norms.clone(),
            geometric_norms: self.geometric_norms.clone(),
        }
    }
}
