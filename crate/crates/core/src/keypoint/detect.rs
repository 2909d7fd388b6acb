use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Keypoint, KeypointError, NeighborRecord};
use crate::features::{cosine_with_norms, norm, FeaturedScene, SimilarityWeights};

/// Thresholds for correspondence detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    pub weights: SimilarityWeights,
    /// Minimum combined score for an argmax to count as a match.
    pub tau_sim: f64,
    /// Neighbor matches within this distance of their expected position vote
    /// for the candidate.
    pub proximity: f64,
    pub consensus: bool,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            weights: SimilarityWeights::default(),
            tau_sim: 0.6,
            proximity: 0.03,
            consensus: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NullReason {
    BelowThreshold,
    NoConsensus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DetectionResult {
    Matched {
        position: Vector3<f64>,
        index: usize,
        score: f64,
        consensus_fraction: f64,
    },
    Null(NullReason),
}

impl DetectionResult {
    pub fn is_match(&self) -> bool {
        matches!(self, DetectionResult::Matched { .. })
    }

    pub fn position(&self) -> Option<Vector3<f64>> {
        match self {
            DetectionResult::Matched { position, .. } => Some(*position),
            DetectionResult::Null(_) => None,
        }
    }

    pub fn index(&self) -> Option<usize> {
        match self {
            DetectionResult::Matched { index, .. } => Some(*index),
            DetectionResult::Null(_) => None,
        }
    }
}

struct Query<'a> {
    visual: &'a [f64],
    visual_norm: f64,
    geometric: &'a [f64],
    geometric_norm: f64,
}

impl<'a> Query<'a> {
    fn new(visual: &'a [f64], geometric: &'a [f64]) -> Result<Self, KeypointError> {
        let visual_norm = norm(visual);
        let geometric_norm = norm(geometric);
        if visual_norm == 0.0 || geometric_norm == 0.0 {
            return Err(KeypointError::ZeroReference);
        }
        Ok(Self {
            visual,
            visual_norm,
            geometric,
            geometric_norm,
        })
    }
}

/// Weighted score of scene point `i` against a query. A zero scene row
/// contributes a zero cosine for its channel.
#[inline]
fn score(scene: &FeaturedScene, i: usize, q: &Query<'_>, w: &SimilarityWeights) -> f64 {
    let field = scene.field();
    let nv = scene.visual_norm(i);
    let ng = scene.geometric_norm(i);
    let vis = if nv > 0.0 {
        cosine_with_norms(field.visual_row(i), nv, q.visual, q.visual_norm)
    } else {
        0.0
    };
    let geo = if ng > 0.0 {
        cosine_with_norms(field.geometric_row(i), ng, q.geometric, q.geometric_norm)
    } else {
        0.0
    };
    w.lambda_vis * vis + w.lambda_geo * geo
}

/// Argmax of every query over the scene in a single pass; ties go to the
/// lowest index.
fn argmax_all(
    scene: &FeaturedScene,
    queries: &[Query<'_>],
    mask_weights: Option<&[f64]>,
    w: &SimilarityWeights,
) -> Vec<(usize, f64)> {
    let mut best = vec![(0usize, f64::NEG_INFINITY); queries.len()];
    for i in 0..scene.len() {
        let m = mask_weights.map_or(1.0, |mw| mw[i]);
        for (q, b) in queries.iter().zip(best.iter_mut()) {
            let s = score(scene, i, q, w) * m;
            if s > b.1 {
                *b = (i, s);
            }
        }
    }
    best
}

fn check_mask(scene: &FeaturedScene, mask_weights: Option<&[f64]>) -> Result<(), KeypointError> {
    if let Some(mw) = mask_weights {
        if mw.len() != scene.len() {
            return Err(KeypointError::InvalidMask(format!(
                "{} weights for {} points",
                mw.len(),
                scene.len()
            )));
        }
        if let Some(bad) = mw.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(KeypointError::InvalidMask(format!("weight {bad} outside (0, 1]")));
        }
    }
    Ok(())
}

/// Locates `keypoint` in `scene`.
///
/// The best-scoring point must reach `tau_sim`. When consensus is enabled and
/// the keypoint carries a neighbor group, each neighbor is matched the same
/// way, and strictly more than half of the matched neighbors must land within
/// `proximity` of the candidate shifted by their reference offset.
pub fn detect(
    keypoint: &Keypoint,
    scene: &FeaturedScene,
    mask_weights: Option<&[f64]>,
    config: &DetectionConfig,
) -> Result<DetectionResult, KeypointError> {
    if scene.is_empty() {
        return Err(KeypointError::EmptyScene);
    }
    check_mask(scene, mask_weights)?;

    let use_group = config.consensus && !keypoint.neighbor_group.is_empty();
    let mut queries = vec![Query::new(&keypoint.ref_visual, &keypoint.ref_geometric)?];
    if use_group {
        for n in &keypoint.neighbor_group {
            queries.push(Query::new(&n.visual, &n.geometric)?);
        }
    }
    let best = argmax_all(scene, &queries, mask_weights, &config.weights);
    let (index, top) = best[0];
    if top < config.tau_sim {
        return Ok(DetectionResult::Null(NullReason::BelowThreshold));
    }
    let position = scene.cloud.points[index];

    let consensus_fraction = if use_group {
        let mut matched = 0usize;
        let mut agreeing = 0usize;
        for (n, &(ni, ns)) in keypoint.neighbor_group.iter().zip(&best[1..]) {
            if ns < config.tau_sim {
                continue;
            }
            matched += 1;
            let expected = position + n.offset;
            if (scene.cloud.points[ni] - expected).norm() <= config.proximity {
                agreeing += 1;
            }
        }
        if matched == 0 || 2 * agreeing <= matched {
            return Ok(DetectionResult::Null(NullReason::NoConsensus));
        }
        agreeing as f64 / matched as f64
    } else {
        1.0
    };

    Ok(DetectionResult::Matched {
        position,
        index,
        score: top,
        consensus_fraction,
    })
}

/// Uniform sample without replacement of up to `count` points within
/// `radius` of `center`, skipping the center itself and points whose feature
/// rows are zero.
pub fn sample_neighbor_group(
    scene: &FeaturedScene,
    center: &Vector3<f64>,
    count: usize,
    radius: f64,
    seed: u64,
) -> Vec<NeighborRecord> {
    assert!(radius > 0.0, "neighbor radius must be positive");
    let field = scene.field();
    let pool: Vec<usize> = scene
        .cloud
        .points
        .iter()
        .enumerate()
        .filter(|(i, p)| {
            let d = (*p - center).norm();
            d > 0.0 && d <= radius && scene.visual_norm(*i) > 0.0 && scene.geometric_norm(*i) > 0.0
        })
        .map(|(i, _)| i)
        .collect();
    let take = count.min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample(&mut rng, pool.len(), take)
        .into_iter()
        .map(|k| {
            let i = pool[k];
            NeighborRecord {
                offset: scene.cloud.points[i] - center,
                visual: field.visual_row(i).to_vec(),
                geometric: field.geometric_row(i).to_vec(),
            }
        })
        .collect()
}
