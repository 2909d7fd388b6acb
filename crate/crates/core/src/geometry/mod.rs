//! Rigid-body math, RGBD deprojection and farthest point sampling.
//!
//! Every cloud produced here lives in the world frame; camera frames only
//! appear transiently inside [`deproject`] and [`project`].

mod camera;
mod cloud;
mod fps;
mod rot6d;
pub mod spatial;
mod transform;

pub use camera::{cloud_from_rgbd, deproject, project, CameraIntrinsics, RgbdImage};
pub use cloud::PointCloud;
pub use fps::farthest_point_sample;
pub use rot6d::{rot6d_decode, rot6d_encode, Rot6D};
pub use transform::RigidTransform;

pub use nalgebra::{Matrix3, Vector3};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate 6D rotation: {0}")]
    DegenerateRotation(&'static str),
    #[error("rotation is not orthonormal (deviation {0:e})")]
    NotOrthonormal(f64),
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    OutOfBounds {
        u: usize,
        v: usize,
        width: usize,
        height: usize,
    },
    #[error("pixel ({u}, {v}) has invalid depth")]
    InvalidDepth { u: usize, v: usize },
    #[error("requested {count} samples from a cloud of {available} points")]
    CountExceedsCloud { count: usize, available: usize },
    #[error("seed index {seed} out of range for {available} points")]
    SeedOutOfRange { seed: usize, available: usize },
    #[error("stride must be at least 1")]
    ZeroStride,
    #[error("raster size mismatch: expected {expected} values, got {actual}")]
    RasterSize { expected: usize, actual: usize },
}
