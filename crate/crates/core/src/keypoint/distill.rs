//! The propose–verify loop that turns one seeding video plus a handful of
//! demonstration scenes into a verified keypoint set.

use std::collections::BTreeMap;

use log::{debug, info};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::detect::{sample_neighbor_group, DetectionConfig, DetectionResult};
use super::verify::verify_consistency;
use super::{DistilledSkill, Keypoint, KeypointError, KeypointId, Provenance};
use crate::features::FeaturedScene;
use crate::geometry::{farthest_point_sample, RgbdImage};
use crate::proposal::{
    nms_masks, overlay_grid, overlay_masks, query_points_for_cells, select_mask, GridSpec, MaskCandidate,
    MaskGenerator, MaskRequest, ProposalBackend, ProposalError, RegionRequest, Transcript,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub detection: DetectionConfig,
    /// Acceptance factor: a candidate passes when matched in at least
    /// `1 − delta` of the demonstrations.
    pub delta: f64,
    /// Fraction of candidates that must pass for a round to be accepted.
    pub gamma: f64,
    /// Candidates drawn by farthest point sampling per round.
    pub candidates: usize,
    pub max_rounds: u32,
    pub neighbor_count: usize,
    pub neighbor_radius: f64,
    pub grid: GridSpec,
    pub query_density: usize,
    pub nms_iou: f64,
    pub nms_confidence: f64,
    /// Video frames sent with the region request, spread evenly over the video.
    pub frames: usize,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            detection: DetectionConfig::default(),
            delta: 0.3,
            gamma: 0.5,
            candidates: 32,
            max_rounds: 5,
            neighbor_count: 8,
            neighbor_radius: 0.02,
            grid: GridSpec::default(),
            query_density: 3,
            nms_iou: 0.9,
            nms_confidence: 0.7,
            frames: 3,
            seed: 0,
        }
    }
}

/// What happened in one rejected (or the accepted) round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: u32,
    pub cells: Vec<String>,
    pub mask_index: Option<usize>,
    pub candidates: usize,
    pub passing_fraction: f64,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("invalid distillation input: {0}")]
    InvalidInput(String),
    #[error("proposal backend: {0}")]
    Backend(#[from] ProposalError),
    #[error(transparent)]
    Keypoint(#[from] KeypointError),
    #[error("no consistent keypoints after {} rounds", .0.len())]
    ExhaustedRounds(Vec<RoundSummary>),
}

pub struct DistillInputs<'a> {
    pub description: &'a str,
    /// Seeding video; keypoints are referenced in its first frame.
    pub video: &'a [RgbdImage],
    /// Featurized cloud of the first video frame, with source pixels.
    pub seed_scene: &'a FeaturedScene,
    pub demos: &'a [FeaturedScene],
}

/// Evenly spaced frame indices, always including the first and last.
pub fn frame_indices(len: usize, count: usize) -> Vec<usize> {
    if len == 0 || count == 0 {
        return Vec::new();
    }
    if count == 1 || len == 1 {
        return vec![0];
    }
    let mut out: Vec<usize> = (0..count)
        .map(|i| ((i as f64) * (len - 1) as f64 / (count - 1) as f64).round() as usize)
        .collect();
    out.dedup();
    out
}

/// Mixes the session seed with round and candidate indices.
fn derive_seed(seed: u64, round: u32, index: usize) -> u64 {
    let mut z = seed ^ ((round as u64) << 32) ^ index as u64;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed-scene points inside `mask` that carry usable features.
fn masked_points(scene: &FeaturedScene, mask: &MaskCandidate) -> Result<Vec<usize>, DistillError> {
    let pixels = scene
        .cloud
        .pixels
        .as_ref()
        .ok_or_else(|| DistillError::InvalidInput("seed scene has no source pixels".into()))?;
    let field = scene.field();
    Ok(pixels
        .iter()
        .enumerate()
        .filter(|(i, (u, v))| {
            mask.contains(*u as usize, *v as usize)
                && !field.is_degenerate(*i)
                && scene.visual_norm(*i) > 0.0
                && scene.geometric_norm(*i) > 0.0
        })
        .map(|(i, _)| i)
        .collect())
}

fn candidates_from_mask(
    scene: &FeaturedScene,
    members: &[usize],
    round: u32,
    config: &DistillConfig,
) -> Result<Vec<Keypoint>, DistillError> {
    let pts: Vec<Vector3<f64>> = members.iter().map(|&i| scene.cloud.points[i]).collect();
    let centroid = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    let start = pts
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - centroid).norm().total_cmp(&(b.1 - centroid).norm()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let count = config.candidates.min(pts.len());
    let order = farthest_point_sample(&pts, count, start)
        .map_err(|e| DistillError::InvalidInput(e.to_string()))?;
    let field = scene.field();
    Ok(order
        .iter()
        .enumerate()
        .map(|(n, &local)| {
            let i = members[local];
            let p = scene.cloud.points[i];
            Keypoint {
                id: KeypointId(n as u32),
                ref_position: p,
                ref_visual: field.visual_row(i).to_vec(),
                ref_geometric: field.geometric_row(i).to_vec(),
                neighbor_group: sample_neighbor_group(
                    scene,
                    &p,
                    config.neighbor_count,
                    config.neighbor_radius,
                    derive_seed(config.seed, round, n),
                ),
            }
        })
        .collect())
}

/// Runs proposal rounds until a candidate set passes the `gamma` criterion
/// or `max_rounds` is exhausted.
pub fn distill(
    inputs: &DistillInputs<'_>,
    backend: &mut dyn ProposalBackend,
    segmenter: &dyn MaskGenerator,
    config: &DistillConfig,
    transcript: &mut Transcript,
) -> Result<DistilledSkill, DistillError> {
    let first = inputs
        .video
        .first()
        .ok_or_else(|| DistillError::InvalidInput("seeding video has no frames".into()))?;
    if inputs.demos.is_empty() {
        return Err(KeypointError::NoDemonstrations.into());
    }
    if inputs.seed_scene.is_empty() {
        return Err(KeypointError::EmptyScene.into());
    }
    let (annotated, layout) = overlay_grid(&first.color, first.width, first.height, config.grid)?;
    let frames: Vec<(usize, &RgbdImage)> = frame_indices(inputs.video.len(), config.frames)
        .into_iter()
        .map(|i| (i, &inputs.video[i]))
        .collect();

    let mut rejected = Vec::new();
    for round in 1..=config.max_rounds {
        let proposal = backend.propose(
            &RegionRequest {
                round,
                description: inputs.description,
                frames: frames.clone(),
                annotated: &annotated,
                layout: &layout,
            },
            transcript,
        )?;
        debug!("round {round}: proposed cells {:?}", proposal.cells);
        let mut summary = RoundSummary {
            round,
            cells: proposal.cells.clone(),
            mask_index: None,
            candidates: 0,
            passing_fraction: 0.0,
            reason: String::new(),
        };

        let queries = query_points_for_cells(&proposal.cells, &layout, config.query_density)?;
        let masks = nms_masks(&segmenter.generate(first, &queries)?, config.nms_iou, config.nms_confidence);
        if masks.is_empty() {
            summary.reason = "segmentation produced no masks for the proposed cells".into();
            backend.notify_rejected(round, &summary.reason);
            rejected.push(summary);
            continue;
        }
        let overlay = overlay_masks(&first.color, first.width, first.height, &masks);
        let mask_index = select_mask(
            backend,
            &MaskRequest {
                round,
                image: first,
                overlay: &overlay,
                masks: &masks,
                proposal: &proposal,
            },
            transcript,
        )?;
        summary.mask_index = Some(mask_index);

        let members = masked_points(inputs.seed_scene, &masks[mask_index])?;
        if members.is_empty() {
            summary.reason = "selected mask covers no usable surface points".into();
            backend.notify_rejected(round, &summary.reason);
            rejected.push(summary);
            continue;
        }
        let candidates = candidates_from_mask(inputs.seed_scene, &members, round, config)?;
        let report = verify_consistency(&candidates, inputs.demos, config.delta, &config.detection)?;
        summary.candidates = candidates.len();
        summary.passing_fraction = report.passing_fraction;
        info!(
            "round {round}: {}/{} candidates consistent",
            report.passing().count(),
            candidates.len()
        );

        if report.passing_fraction >= config.gamma {
            let mut keypoints = Vec::new();
            let mut matches: BTreeMap<usize, BTreeMap<KeypointId, Vector3<f64>>> = BTreeMap::new();
            for (cand, verdict) in candidates.into_iter().zip(&report.verdicts) {
                if !verdict.pass {
                    continue;
                }
                for (d, det) in verdict.detections.iter().enumerate() {
                    if let DetectionResult::Matched { position, .. } = det {
                        matches.entry(d).or_default().insert(cand.id, *position);
                    }
                }
                keypoints.push(cand);
            }
            return Ok(DistilledSkill {
                description: inputs.description.to_string(),
                keypoints,
                matches,
                provenance: Provenance {
                    rounds: round,
                    mask_index,
                    passing_fraction: report.passing_fraction,
                    rejected,
                },
            });
        }

        summary.reason = format!(
            "only {:.0}% of keypoints sampled from this part were re-detected across the demonstrations",
            100.0 * report.passing_fraction
        );
        backend.notify_rejected(round, &summary.reason);
        rejected.push(summary);
    }
    Err(DistillError::ExhaustedRounds(rejected))
}
