use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::geometry::Rot6D;

pub const POSE_DIM: usize = 10;
pub const DEFAULT_HORIZON: usize = 48;

/// End-effector pose: position, 6D rotation and gripper opening in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub rotation: Rot6D,
    pub gripper: f64,
}

impl Pose {
    pub fn new(position: Vector3<f64>, rotation: Rot6D, gripper: f64) -> Self {
        Self {
            position,
            rotation,
            gripper,
        }
    }

    pub fn to_array(&self) -> [f64; POSE_DIM] {
        let r = self.rotation.0;
        [
            self.position.x,
            self.position.y,
            self.position.z,
            r[0],
            r[1],
            r[2],
            r[3],
            r[4],
            r[5],
            self.gripper,
        ]
    }

    pub fn from_array(a: &[f64]) -> Self {
        Self {
            position: Vector3::new(a[0], a[1], a[2]),
            rotation: Rot6D([a[3], a[4], a[5], a[6], a[7], a[8]]),
            gripper: a[9],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Frame {
    World,
    /// Positions are relative to `centroid`; rotations stay in the world frame.
    ObjectRelative { centroid: Vector3<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub poses: Vec<Pose>,
    pub frame: Frame,
}

impl TrajectorySample {
    pub fn world(poses: Vec<Pose>) -> Self {
        Self {
            poses,
            frame: Frame::World,
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Row-major `len × 10` values.
    pub fn to_flat(&self) -> Vec<f64> {
        self.poses.iter().flat_map(|p| p.to_array()).collect()
    }

    pub fn from_flat(values: &[f64], frame: Frame) -> Self {
        Self {
            poses: values.chunks_exact(POSE_DIM).map(Pose::from_array).collect(),
            frame,
        }
    }
}

pub fn centroid(points: &[Vector3<f64>]) -> Option<Vector3<f64>> {
    if points.is_empty() {
        return None;
    }
    Some(points.iter().sum::<Vector3<f64>>() / points.len() as f64)
}

/// Re-expresses positions relative to the keypoint centroid.
pub fn to_object_frame(traj: &TrajectorySample, keypoints: &[Vector3<f64>]) -> Result<TrajectorySample, PolicyError> {
    if traj.frame != Frame::World {
        return Err(PolicyError::FrameMismatch("expected a world-frame trajectory"));
    }
    let c = centroid(keypoints).ok_or(PolicyError::NoKeypoints)?;
    Ok(relative_to(traj, c))
}

pub(crate) fn relative_to(traj: &TrajectorySample, c: Vector3<f64>) -> TrajectorySample {
    TrajectorySample {
        poses: traj
            .poses
            .iter()
            .map(|p| Pose {
                position: p.position - c,
                ..*p
            })
            .collect(),
        frame: Frame::ObjectRelative { centroid: c },
    }
}

pub fn to_world_frame(traj: &TrajectorySample) -> Result<TrajectorySample, PolicyError> {
    let Frame::ObjectRelative { centroid: c } = traj.frame else {
        return Err(PolicyError::FrameMismatch("expected an object-relative trajectory"));
    };
    Ok(TrajectorySample {
        poses: traj
            .poses
            .iter()
            .map(|p| Pose {
                position: p.position + c,
                ..*p
            })
            .collect(),
        frame: Frame::World,
    })
}

/// Nearest rotation (Frobenius norm) to an arbitrary 3×3 matrix.
fn project_to_so3(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut d = Matrix3::identity();
        d[(2, 2)] = -1.0;
        r = u * d * v_t;
    }
    Some(r)
}

fn rotation_matrix(p: &Pose) -> Result<Matrix3<f64>, PolicyError> {
    p.rotation.to_matrix().map_err(|e| PolicyError::InvalidTrajectory(e.to_string()))
}

/// Resamples to `horizon` poses spaced uniformly in path length. Positions
/// and gripper are interpolated linearly, rotations chordally (linear blend
/// of matrices projected back onto SO(3)). A path that never moves is
/// resampled uniformly in index instead.
pub fn resample(poses: &[Pose], horizon: usize) -> Result<Vec<Pose>, PolicyError> {
    if poses.len() < 2 || horizon < 2 {
        return Err(PolicyError::InvalidTrajectory(format!(
            "need at least 2 poses in and out, got {} -> {horizon}",
            poses.len()
        )));
    }
    let mut cumulative = Vec::with_capacity(poses.len());
    cumulative.push(0.0);
    for w in poses.windows(2) {
        let last = *cumulative.last().unwrap();
        cumulative.push(last + (w[1].position - w[0].position).norm());
    }
    let total = *cumulative.last().unwrap();
    if total <= 1e-12 {
        cumulative = (0..poses.len()).map(|i| i as f64).collect();
    }
    let span = *cumulative.last().unwrap();
    let rotations: Vec<Matrix3<f64>> = poses.iter().map(rotation_matrix).collect::<Result<_, _>>()?;

    let mut out = Vec::with_capacity(horizon);
    let mut seg = 0usize;
    for j in 0..horizon {
        let s = span * j as f64 / (horizon - 1) as f64;
        while seg + 2 < cumulative.len() && cumulative[seg + 1] < s {
            seg += 1;
        }
        let (s0, s1) = (cumulative[seg], cumulative[seg + 1]);
        let f = if s1 > s0 { ((s - s0) / (s1 - s0)).clamp(0.0, 1.0) } else { 0.0 };
        let (a, b) = (&poses[seg], &poses[seg + 1]);
        let rotation = if f == 0.0 {
            a.rotation
        } else if f == 1.0 {
            b.rotation
        } else {
            let blend = rotations[seg] * (1.0 - f) + rotations[seg + 1] * f;
            match project_to_so3(&blend) {
                Some(r) => Rot6D::from_matrix(&r),
                None => a.rotation,
            }
        };
        out.push(Pose {
            position: a.position * (1.0 - f) + b.position * f,
            rotation,
            gripper: a.gripper * (1.0 - f) + b.gripper * f,
        });
    }
    Ok(out)
}
