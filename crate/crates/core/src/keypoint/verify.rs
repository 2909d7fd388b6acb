use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::detect::{detect, DetectionConfig, DetectionResult};
use super::{Keypoint, KeypointError, KeypointId};
use crate::features::FeaturedScene;

/// Slack on the acceptance comparison so that e.g. 7/10 ≥ 1 − 0.3 holds
/// despite binary rounding of δ.
const RATIO_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateVerdict {
    pub keypoint: KeypointId,
    pub matched: usize,
    pub demos: usize,
    pub match_fraction: f64,
    pub pass: bool,
    pub detections: Vec<DetectionResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub verdicts: Vec<CandidateVerdict>,
    pub passing_fraction: f64,
}

impl ConsistencyReport {
    pub fn passing(&self) -> impl Iterator<Item = &CandidateVerdict> {
        self.verdicts.iter().filter(|v| v.pass)
    }
}

/// Whether `matched` successes out of `demos` meet the `1 − δ` bar.
pub fn passes_consistency(matched: usize, demos: usize, delta: f64) -> bool {
    demos > 0 && matched as f64 >= (1.0 - delta) * demos as f64 - RATIO_EPSILON
}

/// Detects every candidate in every demonstration scene and applies the
/// cross-instance acceptance rule.
pub fn verify_consistency(
    candidates: &[Keypoint],
    demos: &[FeaturedScene],
    delta: f64,
    config: &DetectionConfig,
) -> Result<ConsistencyReport, KeypointError> {
    if demos.is_empty() {
        return Err(KeypointError::NoDemonstrations);
    }
    if !(0.0..1.0).contains(&delta) {
        return Err(KeypointError::InvalidDelta(delta));
    }
    let pairs: Vec<(usize, usize)> = (0..candidates.len())
        .flat_map(|c| (0..demos.len()).map(move |d| (c, d)))
        .collect();
    let results: Vec<DetectionResult> = pairs
        .par_iter()
        .map(|&(c, d)| detect(&candidates[c], &demos[d], None, config))
        .collect::<Result<_, _>>()?;

    let verdicts: Vec<CandidateVerdict> = candidates
        .iter()
        .enumerate()
        .map(|(c, k)| {
            let detections = results[c * demos.len()..(c + 1) * demos.len()].to_vec();
            let matched = detections.iter().filter(|r| r.is_match()).count();
            CandidateVerdict {
                keypoint: k.id,
                matched,
                demos: demos.len(),
                match_fraction: matched as f64 / demos.len() as f64,
                pass: passes_consistency(matched, demos.len(), delta),
                detections,
            }
        })
        .collect();
    let passing = verdicts.iter().filter(|v| v.pass).count();
    let passing_fraction = if verdicts.is_empty() {
        0.0
    } else {
        passing as f64 / verdicts.len() as f64
    };
    Ok(ConsistencyReport {
        verdicts,
        passing_fraction,
    })
}
