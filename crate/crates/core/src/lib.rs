pub mod config;
pub mod features;
pub mod geometry;
pub mod keypoint;
pub mod policy;
pub mod proposal;
pub mod runtime;
