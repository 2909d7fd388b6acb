use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ProposalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Region,
    Mask,
}

/// One request/response exchange with a proposal backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub seq: usize,
    pub round: u32,
    pub kind: RequestKind,
    /// 1-based attempt number within a request (parse retries).
    pub attempt: u32,
    pub prompt: String,
    pub images: Vec<String>,
    pub response: String,
    pub parsed: Option<serde_json::Value>,
    pub error: Option<String>,
}

/// Append-only log of backend exchanges, stored as JSON lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    records: Vec<TranscriptRecord>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn append(
        &mut self,
        round: u32,
        kind: RequestKind,
        attempt: u32,
        prompt: &str,
        images: Vec<String>,
        response: &str,
        parsed: Option<serde_json::Value>,
        error: Option<String>,
    ) {
        let seq = self.records.len();
        self.records.push(TranscriptRecord {
            seq,
            round,
            kind,
            attempt,
            prompt: prompt.to_string(),
            images,
            response: response.to_string(),
            parsed,
            error,
        });
    }

    pub fn records(&self) -> &[TranscriptRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("transcript records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, ProposalError> {
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: TranscriptRecord = serde_json::from_str(line)
                .map_err(|e| ProposalError::Transcript(format!("line {}: {e}", n + 1)))?;
            records.push(r);
        }
        Ok(Self { records })
    }

    pub fn write(&self, path: &Path) -> Result<(), ProposalError> {
        let mut f = fs::File::create(path).map_err(|e| ProposalError::Io(e.to_string()))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| ProposalError::Io(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self, ProposalError> {
        let text = fs::read_to_string(path).map_err(|e| ProposalError::Io(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let mut t = Transcript::new();
        t.append(1, RequestKind::Region, 1, "pick", vec!["video:0".into()], "```json\n{}\n```", None, Some("bad".into()));
        t.append(1, RequestKind::Mask, 1, "mask?", vec![], "x", Some(serde_json::json!({"mask": 1})), None);
        let back = Transcript::from_jsonl(&t.to_jsonl()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.records()[1].seq, 1);
    }
}
