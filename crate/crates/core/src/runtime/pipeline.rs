//! Glue between dataset files and the keypoint and policy stages.

use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::io::{demo_feature_path, video_feature_path, SkillBundle};
use super::phases::segment_phases;
use super::RuntimeError;
use crate::features::{FeaturedScene, FileProvider, ProceduralProvider, VisualFeatureProvider, DEFAULT_FPFH_RADIUS,
    DEFAULT_VISUAL_DIM};
use crate::geometry::{cloud_from_rgbd, RgbdImage};
use crate::keypoint::{detect, DetectionConfig, DistillConfig, DistillInputs, DistilledSkill, KeypointId};
use crate::policy::{
    resample, to_object_frame, ConditionSet, KeypointObservation, TrainingPair, TrajectorySample,
};
use crate::proposal::{MaskGenerator, ProposalBackend, Transcript};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub visual_dim: usize,
    pub bandwidth: f64,
    /// Radius of the surface-variation estimate of the procedural provider.
    pub neighborhood: f64,
    pub provider_seed: u64,
    pub fpfh_radius: f64,
    /// Pixel stride when converting depth to points.
    pub stride: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            visual_dim: DEFAULT_VISUAL_DIM,
            bandwidth: ProceduralProvider::DEFAULT_BANDWIDTH,
            neighborhood: ProceduralProvider::DEFAULT_NEIGHBORHOOD,
            provider_seed: ProceduralProvider::DEFAULT_SEED,
            fpfh_radius: DEFAULT_FPFH_RADIUS,
            stride: 1,
        }
    }
}

impl FeatureConfig {
    pub fn procedural(&self) -> ProceduralProvider {
        ProceduralProvider::new(self.visual_dim, self.bandwidth, self.neighborhood, self.provider_seed)
    }
}

/// Point cloud of `image` with visual features from the `sidecar` file when
/// given, else from the procedural provider.
pub fn featurize(image: &RgbdImage, sidecar: Option<&Path>, config: &FeatureConfig) -> Result<FeaturedScene, RuntimeError> {
    let cloud = cloud_from_rgbd(image, config.stride)?;
    let provider: Box<dyn VisualFeatureProvider> = match sidecar {
        Some(path) => Box::new(FileProvider::open(path)?),
        None => Box::new(config.procedural()),
    };
    Ok(FeaturedScene::build(Some(image), cloud, provider.as_ref(), config.fpfh_radius)?)
}

fn existing(path: std::path::PathBuf) -> Option<std::path::PathBuf> {
    path.exists().then_some(path)
}

/// Featurized first video frame and demonstration observations of the
/// bundle stored in `dir`.
pub fn load_scene_features(
    bundle: &SkillBundle,
    dir: Option<&Path>,
    config: &FeatureConfig,
) -> Result<(FeaturedScene, Vec<FeaturedScene>), RuntimeError> {
    let seed_sidecar = dir.and_then(|d| existing(video_feature_path(d, 0)));
    let seed = featurize(&bundle.video[0], seed_sidecar.as_deref(), config)?;
    let demos = bundle
        .demos
        .iter()
        .enumerate()
        .map(|(i, demo)| {
            let sidecar = dir.and_then(|d| existing(demo_feature_path(d, i)));
            featurize(&demo.observation, sidecar.as_deref(), config)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((seed, demos))
}

/// Runs keypoint distillation on a loaded bundle.
pub fn distill_bundle(
    bundle: &SkillBundle,
    seed_scene: &FeaturedScene,
    demo_scenes: &[FeaturedScene],
    backend: &mut dyn ProposalBackend,
    segmenter: &dyn MaskGenerator,
    config: &DistillConfig,
    transcript: &mut Transcript,
) -> Result<DistilledSkill, RuntimeError> {
    let inputs = DistillInputs {
        description: &bundle.description,
        video: &bundle.video,
        seed_scene,
        demos: demo_scenes,
    };
    Ok(crate::keypoint::distill(&inputs, backend, segmenter, config, transcript)?)
}

/// Per-point weights: 1 inside the pixel mask, `discount` outside.
pub fn mask_weights(scene: &FeaturedScene, width: usize, mask: &[bool], discount: f64) -> Result<Vec<f64>, RuntimeError> {
    let pixels = scene
        .cloud
        .pixels
        .as_ref()
        .ok_or_else(|| RuntimeError::InvalidConfig("scene has no source pixels for mask weighting".into()))?;
    pixels
        .iter()
        .map(|&(u, v)| {
            mask.get(v as usize * width + u as usize)
                .map(|inside| if *inside { 1.0 } else { discount })
                .ok_or_else(|| RuntimeError::InvalidConfig("mask is smaller than the image".into()))
        })
        .collect()
}

/// Detects every skill keypoint; observations carry the scene's feature
/// rows at the matched point.
pub fn detect_keypoints(
    scene: &FeaturedScene,
    skill: &DistilledSkill,
    weights: Option<&[f64]>,
    config: &DetectionConfig,
) -> Result<Vec<(KeypointId, Option<KeypointObservation>)>, RuntimeError> {
    let field = scene.field();
    skill
        .keypoints
        .iter()
        .map(|k| {
            let result = detect(k, scene, weights, config)?;
            let obs = result.index().map(|i| KeypointObservation {
                position: scene.cloud.points[i],
                visual: field.visual_row(i).to_vec(),
                geometric: field.geometric_row(i).to_vec(),
            });
            Ok((k.id, obs))
        })
        .collect()
}

/// One (condition, object-relative execution trajectory) pair per
/// demonstration with at least one detected keypoint.
pub fn training_pairs(
    bundle: &SkillBundle,
    demo_scenes: &[FeaturedScene],
    skill: &DistilledSkill,
    detection: &DetectionConfig,
    phase_threshold: f64,
    horizon: usize,
) -> Result<Vec<TrainingPair>, RuntimeError> {
    if demo_scenes.len() != bundle.demos.len() {
        return Err(RuntimeError::InvalidConfig(format!(
            "{} featurized scenes for {} demonstrations",
            demo_scenes.len(),
            bundle.demos.len()
        )));
    }
    let mut pairs = Vec::new();
    for (i, (demo, scene)) in bundle.demos.iter().zip(demo_scenes).enumerate() {
        let observations = detect_keypoints(scene, skill, None, detection)?;
        let condition = match ConditionSet::from_observations(&observations) {
            Ok(c) => c,
            Err(_) => {
                warn!("demonstration {i}: no keypoint detected, skipped");
                continue;
            }
        };
        let detected: Vec<_> = observations.iter().filter_map(|(_, o)| o.as_ref().map(|o| o.position)).collect();
        let split = segment_phases(&demo.poses, &detected, phase_threshold)?;
        let execution = if split.execution.len() >= 2 {
            split.execution
        } else {
            demo.poses[demo.poses.len() - 2..].to_vec()
        };
        let world = TrajectorySample::world(resample(&execution, horizon)?);
        let trajectory = to_object_frame(&world, &[condition.centroid])?;
        pairs.push(TrainingPair { condition, trajectory });
    }
    Ok(pairs)
}
