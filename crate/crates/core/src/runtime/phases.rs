use log::warn;
use nalgebra::Vector3;

use super::RuntimeError;
use crate::policy::Pose;

pub const DEFAULT_PHASE_THRESHOLD: f64 = 0.10;

/// A trajectory cut into free-space approach and object interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSplit {
    pub approach: Vec<Pose>,
    pub execution: Vec<Pose>,
    /// Index of the first execution pose in the input.
    pub split: usize,
    /// No pose came within the threshold; everything counts as execution.
    pub fallback: bool,
}

fn nearest_distance(p: &Vector3<f64>, keypoints: &[Vector3<f64>]) -> f64 {
    keypoints.iter().map(|k| (p - k).norm()).fold(f64::INFINITY, f64::min)
}

/// Execution starts at the first pose within `threshold` of any keypoint.
pub fn segment_phases(traj: &[Pose], keypoints: &[Vector3<f64>], threshold: f64) -> Result<PhaseSplit, RuntimeError> {
    if !(threshold > 0.0) {
        return Err(RuntimeError::InvalidConfig(format!("phase threshold must be positive, got {threshold}")));
    }
    if keypoints.is_empty() {
        return Err(RuntimeError::InvalidConfig("phase segmentation needs at least one keypoint".into()));
    }
    let hit = traj
        .iter()
        .position(|p| nearest_distance(&p.position, keypoints) <= threshold);
    let (split, fallback) = match hit {
        Some(i) => (i, false),
        None => {
            warn!("no pose comes within {threshold} m of a keypoint; treating the whole trajectory as execution");
            (0, true)
        }
    };
    Ok(PhaseSplit {
        approach: traj[..split].to_vec(),
        execution: traj[split..].to_vec(),
        split,
        fallback,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::geometry::Rot6D;

    fn line(n: usize, from: f64, step: f64) -> Vec<Pose> {
        (0..n)
            .map(|i| Pose::new(Vector3::new(from - step * i as f64, 0.0, 0.0), Rot6D::IDENTITY, 1.0))
            .collect()
    }

    #[test]
    fn first_pose_inside_gives_empty_approach() {
        let t = line(5, 0.05, 0.01);
        let s = segment_phases(&t, &[Vector3::zeros()], 0.1).unwrap();
        assert!(s.approach.is_empty() && !s.fallback);
        assert_eq!(s.execution, t);
    }

    #[test]
    fn crossing_at_known_index() {
        // x_i = 1 − i/16 (exact in binary): pose 12 sits at 0.25, pose 11 at 0.3125.
        let t = line(20, 1.0, 0.0625);
        let s = segment_phases(&t, &[Vector3::zeros(), Vector3::new(-5.0, 0.0, 0.0)], 0.25).unwrap();
        assert_eq!(s.split, 12);
        assert_eq!(s.approach.len(), 12);
    }

    #[test]
    fn nothing_within_threshold_falls_back() {
        let t = line(4, 3.0, 0.1);
        let s = segment_phases(&t, &[Vector3::zeros()], 0.1).unwrap();
        assert!(s.fallback);
        assert_eq!(s.execution, t);
    }

    #[test]
    fn preconditions() {
        let t = line(4, 3.0, 0.1);
        assert!(segment_phases(&t, &[], 0.1).is_err());
        assert!(segment_phases(&t, &[Vector3::zeros()], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn partition_complete_and_idempotent(
            xs in prop::collection::vec(-1.0f64..1.0, 1..40),
            kx in -1.0f64..1.0,
            threshold in 0.01f64..0.5,
        ) {
            let t: Vec<Pose> = xs.iter().map(|x| Pose::new(Vector3::new(*x, 0.0, 0.0), Rot6D::IDENTITY, 0.0)).collect();
            let k = [Vector3::new(kx, 0.0, 0.0)];
            let s = segment_phases(&t, &k, threshold).unwrap();
            let mut joined = s.approach.clone();
            joined.extend(s.execution.iter().cloned());
            prop_assert_eq!(&joined, &t);
            let again = segment_phases(&s.execution, &k, threshold).unwrap();
            prop_assert!(again.approach.is_empty());
            prop_assert_eq!(again.execution, s.execution);
        }
    }
}
