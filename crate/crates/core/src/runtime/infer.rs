//! Detection, trajectory sampling and reachability filtering in a new scene.

use log::{debug, info};
use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::pipeline::detect_keypoints;
use super::planner::{birrt_plan, PlanError, PlannerConfig, SceneWorld};
use super::RuntimeError;
use crate::features::FeaturedScene;
use crate::geometry::Rot6D;
use crate::keypoint::{DetectionConfig, DistilledSkill};
use crate::policy::{to_world_frame, ConditionSet, PolicyModel, Pose, TrajectorySample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Weight of points outside a coarse region mask, when one is given.
    pub mask_discount: f64,
    pub detection: DetectionConfig,
    pub planner: PlannerConfig,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            n_samples: 8,
            seed: 0,
            mask_discount: 0.5,
            detection: DetectionConfig::default(),
            planner: PlannerConfig::default(),
        }
    }
}

pub struct InferInputs<'a> {
    pub scene: &'a FeaturedScene,
    pub skill: &'a DistilledSkill,
    pub model: &'a PolicyModel,
    pub world: &'a SceneWorld,
    pub start: Pose,
    /// Per-point detection weights from a coarse region mask.
    pub mask_weights: Option<&'a [f64]>,
}

/// Why a sampled trajectory was or was not accepted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleVerdict {
    Feasible { waypoints: usize },
    StartInCollision,
    GoalInCollision,
    NoPath,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferencePlan {
    /// From the start pose to the first execution pose.
    pub approach_path: Vec<Pose>,
    pub execution: TrajectorySample,
    pub chosen: usize,
    /// One verdict per sample tried, in order.
    pub verdicts: Vec<SampleVerdict>,
    pub condition: ConditionSet,
    /// Every sampled trajectory, world frame.
    pub samples: Vec<TrajectorySample>,
}

fn check_dims(skill: &DistilledSkill, model: &PolicyModel) -> Result<(), RuntimeError> {
    let ids: Vec<_> = skill.keypoints.iter().map(|k| k.id).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    if sorted != model.keypoint_ids {
        return Err(RuntimeError::Mismatch("keypoint ids differ".into()));
    }
    if skill.visual_dim() != model.visual_dim || skill.geometric_dim() != model.geometric_dim {
        return Err(RuntimeError::Mismatch(format!(
            "skill features are {}+{}, model expects {}+{}",
            skill.visual_dim(),
            skill.geometric_dim(),
            model.visual_dim,
            model.geometric_dim
        )));
    }
    Ok(())
}

/// Detects the skill keypoints and samples world-frame trajectories.
pub fn predict_world(
    scene: &FeaturedScene,
    skill: &DistilledSkill,
    model: &PolicyModel,
    mask_weights: Option<&[f64]>,
    config: &InferConfig,
) -> Result<(ConditionSet, Vec<TrajectorySample>), RuntimeError> {
    check_dims(skill, model)?;
    let observations = detect_keypoints(scene, skill, mask_weights, &config.detection)?;
    if observations.iter().all(|(_, o)| o.is_none()) {
        return Err(RuntimeError::AllKeypointsNull);
    }
    let condition = ConditionSet::from_observations(&observations)?;
    info!(
        "detected {}/{} keypoints",
        condition.entries.len() - condition.filled_count(),
        condition.entries.len()
    );
    let samples = model
        .sample(&condition, config.n_samples, config.seed)?
        .iter()
        .map(to_world_frame)
        .collect::<Result<Vec<_>, _>>()?;
    Ok((condition, samples))
}

fn quaternion(r: &Rot6D) -> Result<UnitQuaternion<f64>, RuntimeError> {
    let m = r.to_matrix().map_err(|e| RuntimeError::InvalidConfig(format!("pose rotation: {e}")))?;
    Ok(UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m)))
}

/// Subdivides `path` so consecutive points are at most `step` apart.
fn densify(path: &[Vector3<f64>], step: f64) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(path.len());
    for w in path.windows(2) {
        let n = ((w[1] - w[0]).norm() / step).ceil().max(1.0) as usize;
        out.extend((0..n).map(|i| w[0].lerp(&w[1], i as f64 / n as f64)));
    }
    out.extend(path.last().copied());
    out
}

/// Poses along `path` with orientation and gripper blended by travelled
/// distance. The last pose is `goal` itself.
fn approach_poses(path: &[Vector3<f64>], start: &Pose, goal: &Pose) -> Result<Vec<Pose>, RuntimeError> {
    let q0 = quaternion(&start.rotation)?;
    let q1 = quaternion(&goal.rotation)?;
    let lengths: Vec<f64> = std::iter::once(0.0)
        .chain(path.windows(2).scan(0.0, |acc, w| {
            *acc += (w[1] - w[0]).norm();
            Some(*acc)
        }))
        .collect();
    let total = *lengths.last().unwrap_or(&0.0);
    let mut out: Vec<Pose> = path
        .iter()
        .zip(&lengths)
        .map(|(p, l)| {
            let f = if total > 0.0 { l / total } else { 1.0 };
            let q = q0.try_slerp(&q1, f, 1e-12).unwrap_or(if f < 0.5 { q0 } else { q1 });
            Pose::new(
                *p,
                Rot6D::from_matrix(q.to_rotation_matrix().matrix()),
                start.gripper + f * (goal.gripper - start.gripper),
            )
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = *goal;
    }
    Ok(out)
}

/// Tries sampled trajectories in order and returns the first whose start is
/// reachable from `inputs.start`.
pub fn infer(inputs: &InferInputs<'_>, config: &InferConfig) -> Result<InferencePlan, RuntimeError> {
    let (condition, samples) = predict_world(inputs.scene, inputs.skill, inputs.model, inputs.mask_weights, config)?;
    let mut verdicts = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let first = sample.poses[0];
        let planner = PlannerConfig {
            seed: config.planner.seed.wrapping_add(i as u64),
            ..config.planner
        };
        match birrt_plan(&inputs.start.position, &first.position, inputs.world, &planner) {
            Ok(path) => {
                verdicts.push(SampleVerdict::Feasible { waypoints: path.len() });
                debug!("sample {i}: reachable via {} waypoints", path.len());
                let approach_path = approach_poses(&densify(&path, planner.step), &inputs.start, &first)?;
                return Ok(InferencePlan {
                    approach_path,
                    execution: sample.clone(),
                    chosen: i,
                    verdicts,
                    condition,
                    samples,
                });
            }
            Err(PlanError::StartInCollision) => return Err(PlanError::StartInCollision.into()),
            Err(PlanError::GoalInCollision) => verdicts.push(SampleVerdict::GoalInCollision),
            Err(PlanError::NoPath(_)) => verdicts.push(SampleVerdict::NoPath),
            Err(e @ PlanError::InvalidWorld(_)) => return Err(e.into()),
        }
        debug!("sample {i}: {:?}", verdicts.last());
    }
    Err(RuntimeError::Exhausted(verdicts))
}
