//! Extraction of the fenced structured block from free-form responses.

use serde::Deserialize;
use thiserror::Error;

use super::grid::GridSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("response contains no fenced block")]
    MissingBlock,
    #[error("fenced block is not valid JSON: {0}")]
    InvalidJson(String),
    #[error("unknown grid label {0:?}")]
    UnknownLabel(String),
    #[error("no grid cells selected")]
    EmptyCells,
    #[error("mask index {index} out of range for {len} masks")]
    IndexOutOfRange { index: i64, len: usize },
}

/// Body of the first ``` fence, without the optional language tag.
pub fn extract_fenced_block(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    let body_start = after.find('\n').map_or(0, |i| {
        let tag = after[..i].trim();
        if tag.chars().all(|c| c.is_ascii_alphanumeric()) {
            i + 1
        } else {
            0
        }
    });
    let body = &after[body_start..];
    let end = body.find("```")?;
    Some(body[..end].trim())
}

/// Text outside the fenced block, kept as the reasoning transcript.
pub fn rationale(text: &str) -> String {
    match (text.find("```"), text.rfind("```")) {
        (Some(a), Some(b)) if b > a => format!("{}{}", text[..a].trim(), text[b + 3..].trim_end()),
        _ => text.trim().to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ParsedRegion {
    #[serde(default)]
    pub object: String,
    #[serde(default)]
    pub part: String,
    pub cells: Vec<String>,
}

pub fn parse_region_response(text: &str, grid: &GridSpec) -> Result<ParsedRegion, ParseError> {
    let block = extract_fenced_block(text).ok_or(ParseError::MissingBlock)?;
    let mut parsed: ParsedRegion = serde_json::from_str(block).map_err(|e| ParseError::InvalidJson(e.to_string()))?;
    if parsed.cells.is_empty() {
        return Err(ParseError::EmptyCells);
    }
    for cell in parsed.cells.iter_mut() {
        let (r, c) = grid
            .parse_label(cell)
            .ok_or_else(|| ParseError::UnknownLabel(cell.clone()))?;
        *cell = GridSpec::label(r, c);
    }
    let mut seen = Vec::new();
    parsed.cells.retain(|c| {
        let fresh = !seen.contains(c);
        seen.push(c.clone());
        fresh
    });
    Ok(parsed)
}

#[derive(Debug, Deserialize)]
struct ParsedMask {
    mask: i64,
}

pub fn parse_mask_response(text: &str, mask_count: usize) -> Result<usize, ParseError> {
    let block = extract_fenced_block(text).ok_or(ParseError::MissingBlock)?;
    let parsed: ParsedMask = serde_json::from_str(block).map_err(|e| ParseError::InvalidJson(e.to_string()))?;
    if parsed.mask < 0 || parsed.mask as usize >= mask_count {
        return Err(ParseError::IndexOutOfRange {
            index: parsed.mask,
            len: mask_count,
        });
    }
    Ok(parsed.mask as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fenced_block_variants() {
        assert_eq!(extract_fenced_block("a\n```json\n{\"x\":1}\n```\nb"), Some("{\"x\":1}"));
        assert_eq!(extract_fenced_block("```\n[1]\n```"), Some("[1]"));
        assert_eq!(extract_fenced_block("```{\"mask\": 2}```"), Some("{\"mask\": 2}"));
        assert_eq!(extract_fenced_block("no fence"), None);
        assert_eq!(extract_fenced_block("```json\nunterminated"), None);
    }

    #[test]
    fn region_parsing_validates_labels() {
        let grid = GridSpec { rows: 4, cols: 4 };
        let ok = parse_region_response(
            "The drawer handle.\n```json\n{\"object\":\"drawer\",\"part\":\"handle\",\"cells\":[\"b2\",\"B2\",\"C3\"]}\n```",
            &grid,
        )
        .unwrap();
        assert_eq!(ok.cells, vec!["B2", "C3"]);
        assert_eq!(ok.part, "handle");
        assert_eq!(
            parse_region_response("```json\n{\"cells\":[\"Z9\"]}\n```", &grid),
            Err(ParseError::UnknownLabel("Z9".into()))
        );
        assert_eq!(parse_region_response("I think B2.", &grid), Err(ParseError::MissingBlock));
        assert_eq!(
            parse_region_response("```json\n{\"cells\":[]}\n```", &grid),
            Err(ParseError::EmptyCells)
        );
    }

    #[test]
    fn mask_parsing_checks_range() {
        assert_eq!(parse_mask_response("```json\n{\"mask\": 2}\n```", 4), Ok(2));
        assert_eq!(
            parse_mask_response("```json\n{\"mask\": 7}\n```", 4),
            Err(ParseError::IndexOutOfRange { index: 7, len: 4 })
        );
    }

    #[test]
    fn rationale_strips_block() {
        assert_eq!(rationale("think first\n```json\n{}\n```"), "think first");
    }
}
