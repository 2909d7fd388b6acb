use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::trajectory::centroid;
use super::PolicyError;
use crate::keypoint::KeypointId;

/// A detected keypoint: world position and the feature rows at that point.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointObservation {
    pub position: Vector3<f64>,
    pub visual: Vec<f64>,
    pub geometric: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEntry {
    pub id: KeypointId,
    /// Relative to the centroid of the detected keypoints.
    pub position: Vector3<f64>,
    pub visual: Vec<f64>,
    pub geometric: Vec<f64>,
    /// Not detected; values are the mean of the detected keypoints.
    pub filled: bool,
}

/// Conditioning of the denoiser, in keypoint id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSet {
    pub entries: Vec<ConditionEntry>,
    pub centroid: Vector3<f64>,
}

fn mean_rows<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
        n += 1;
    }
    acc.iter().map(|a| a / n as f64).collect()
}

impl ConditionSet {
    /// Builds the set from per-keypoint observations. Missing keypoints are
    /// filled with the mean position and features of the detected ones.
    pub fn from_observations(observations: &[(KeypointId, Option<KeypointObservation>)]) -> Result<Self, PolicyError> {
        let detected: Vec<&KeypointObservation> = observations.iter().filter_map(|(_, o)| o.as_ref()).collect();
        let first = detected.first().ok_or(PolicyError::NoKeypoints)?;
        let (dv, dg) = (first.visual.len(), first.geometric.len());
        if let Some(bad) = detected.iter().find(|o| o.visual.len() != dv || o.geometric.len() != dg) {
            return Err(PolicyError::DimensionMismatch {
                expected: dv + dg,
                actual: bad.visual.len() + bad.geometric.len(),
            });
        }
        let positions: Vec<Vector3<f64>> = detected.iter().map(|o| o.position).collect();
        let c = centroid(&positions).expect("non-empty");
        let mean_vis = mean_rows(detected.iter().map(|o| o.visual.as_slice()), dv);
        let mean_geo = mean_rows(detected.iter().map(|o| o.geometric.as_slice()), dg);

        let mut sorted: Vec<&(KeypointId, Option<KeypointObservation>)> = observations.iter().collect();
        sorted.sort_by_key(|(id, _)| *id);
        let entries = sorted
            .into_iter()
            .map(|(id, obs)| match obs {
                Some(o) => ConditionEntry {
                    id: *id,
                    position: o.position - c,
                    visual: o.visual.clone(),
                    geometric: o.geometric.clone(),
                    filled: false,
                },
                None => ConditionEntry {
                    id: *id,
                    position: Vector3::zeros(),
                    visual: mean_vis.clone(),
                    geometric: mean_geo.clone(),
                    filled: true,
                },
            })
            .collect();
        Ok(Self { entries, centroid: c })
    }

    pub fn ids(&self) -> Vec<KeypointId> {
        self.entries.iter().map(|e| e.id).collect()
    }

    pub fn visual_dim(&self) -> usize {
        self.entries.first().map_or(0, |e| e.visual.len())
    }

    pub fn geometric_dim(&self) -> usize {
        self.entries.first().map_or(0, |e| e.geometric.len())
    }

    pub fn filled_count(&self) -> usize {
        self.entries.iter().filter(|e| e.filled).count()
    }

    /// `[pos(3), visual, geometric]` per keypoint, concatenated.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for e in &self.entries {
            out.extend(e.position.iter());
            out.extend(&e.visual);
            out.extend(&e.geometric);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(x: f64, v: f64) -> KeypointObservation {
        KeypointObservation {
            position: Vector3::new(x, 0.0, 1.0),
            visual: vec![v, 1.0],
            geometric: vec![2.0 * v],
        }
    }

    #[test]
    fn sorted_and_filled() {
        let set = ConditionSet::from_observations(&[
            (KeypointId(2), Some(obs(1.0, 3.0))),
            (KeypointId(0), None),
            (KeypointId(1), Some(obs(3.0, 5.0))),
        ])
        .unwrap();
        assert_eq!(set.ids(), vec![KeypointId(0), KeypointId(1), KeypointId(2)]);
        assert_eq!(set.centroid, Vector3::new(2.0, 0.0, 1.0));
        let filled = &set.entries[0];
        assert!(filled.filled);
        assert_eq!(filled.position, Vector3::zeros());
        assert_eq!(filled.visual, vec![4.0, 1.0]);
        assert_eq!(set.entries[1].position, Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(set.flatten().len(), 3 * (3 + 2 + 1));
    }

    #[test]
    fn all_missing_is_an_error() {
        assert_eq!(
            ConditionSet::from_observations(&[(KeypointId(0), None)]),
            Err(PolicyError::NoKeypoints)
        );
    }
}
