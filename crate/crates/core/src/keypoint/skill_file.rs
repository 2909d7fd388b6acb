//! On-disk form of a distilled skill: a versioned JSON document.
//! Field layout is documented in `docs/FORMATS.md`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::DistilledSkill;

pub const FORMAT: &str = "kpdistill-skill";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SkillFileError {
    #[error("cannot access skill file {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("malformed skill file: {0}")]
    Format(String),
    #[error("unsupported skill file version {0}")]
    Version(u32),
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    skill: T,
}

pub fn to_string(skill: &DistilledSkill) -> String {
    let env = Envelope {
        format: FORMAT.to_string(),
        version: VERSION,
        skill,
    };
    serde_json::to_string_pretty(&env).expect("skill serializes")
}

pub fn from_str(text: &str) -> Result<DistilledSkill, SkillFileError> {
    let env: Envelope<DistilledSkill> =
        serde_json::from_str(text).map_err(|e| SkillFileError::Format(e.to_string()))?;
    if env.format != FORMAT {
        return Err(SkillFileError::Format(format!("unexpected format tag {:?}", env.format)));
    }
    if env.version != VERSION {
        return Err(SkillFileError::Version(env.version));
    }
    Ok(env.skill)
}

pub fn save(skill: &DistilledSkill, path: &Path) -> Result<(), SkillFileError> {
    fs::write(path, to_string(skill)).map_err(|e| SkillFileError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

pub fn load(path: &Path) -> Result<DistilledSkill, SkillFileError> {
    let text = fs::read_to_string(path).map_err(|e| SkillFileError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    from_str(&text)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use nalgebra::Vector3;

    use super::*;
    use crate::keypoint::{Keypoint, KeypointId, NeighborRecord, Provenance, RoundSummary};

    fn sample() -> DistilledSkill {
        let k = Keypoint {
            id: KeypointId(3),
            ref_position: Vector3::new(0.1, -0.2, 0.30000000000000004),
            ref_visual: vec![0.1, 1.0 / 3.0, -2.5e-7],
            ref_geometric: vec![100.0 / 7.0; 33],
            neighbor_group: vec![NeighborRecord {
                offset: Vector3::new(0.01, 0.0, -0.005),
                visual: vec![0.2, 0.3, 0.4],
                geometric: vec![1.0; 33],
            }],
        };
        let mut matches = BTreeMap::new();
        matches.insert(0usize, BTreeMap::from([(KeypointId(3), Vector3::new(1.0, 2.0, 3.0))]));
        matches.insert(4usize, BTreeMap::new());
        DistilledSkill {
            description: "open the drawer".into(),
            keypoints: vec![k],
            matches,
            provenance: Provenance {
                rounds: 2,
                mask_index: 1,
                passing_fraction: 0.6875,
                rejected: vec![RoundSummary {
                    round: 1,
                    cells: vec!["A1".into()],
                    mask_index: Some(0),
                    candidates: 32,
                    passing_fraction: 0.125,
                    reason: "inconsistent".into(),
                }],
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let skill = sample();
        let back = from_str(&to_string(&skill)).unwrap();
        assert_eq!(back, skill);
        assert_eq!(to_string(&back), to_string(&skill));
    }

    #[test]
    fn rejects_foreign_documents() {
        assert!(matches!(from_str("{}"), Err(SkillFileError::Format(_))));
        let text = to_string(&sample()).replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(from_str(&text), Err(SkillFileError::Version(9))));
    }
}
