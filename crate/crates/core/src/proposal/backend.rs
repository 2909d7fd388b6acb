use serde::{Deserialize, Serialize};

use super::grid::GridLayout;
use super::masks::MaskCandidate;
use super::parse::{parse_mask_response, parse_region_response, rationale, ParseError};
use super::transcript::{RequestKind, Transcript};
use super::ProposalError;
use crate::geometry::RgbdImage;

/// Coarse task-relevant region chosen on the labeled grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionProposal {
    pub cells: Vec<String>,
    pub rationale: String,
    pub object_description: String,
    pub part_description: String,
}

pub struct RegionRequest<'a> {
    pub round: u32,
    pub description: &'a str,
    /// Frames of the seeding video sent along with the grid image.
    pub frames: Vec<(usize, &'a RgbdImage)>,
    pub annotated: &'a [[u8; 3]],
    pub layout: &'a GridLayout,
}

pub struct MaskRequest<'a> {
    pub round: u32,
    pub image: &'a RgbdImage,
    pub overlay: &'a [[u8; 3]],
    pub masks: &'a [MaskCandidate],
    pub proposal: &'a RegionProposal,
}

pub trait RegionProposer {
    fn propose(&mut self, request: &RegionRequest<'_>, transcript: &mut Transcript) -> Result<RegionProposal, ProposalError>;

    /// Told when a round's keypoints failed verification, before the next
    /// proposal is requested.
    fn notify_rejected(&mut self, _round: u32, _feedback: &str) {}
}

pub trait MaskSelector {
    fn select(&mut self, request: &MaskRequest<'_>, transcript: &mut Transcript) -> Result<usize, ProposalError>;
}

/// Both vision-language roles of the proposal loop.
pub trait ProposalBackend: RegionProposer + MaskSelector {}

impl<T: RegionProposer + MaskSelector> ProposalBackend for T {}

/// Mask selection with the forced-choice shortcut: a single surviving mask is
/// chosen without consulting the backend.
pub fn select_mask<S: MaskSelector + ?Sized>(
    selector: &mut S,
    request: &MaskRequest<'_>,
    transcript: &mut Transcript,
) -> Result<usize, ProposalError> {
    match request.masks.len() {
        0 => Err(ProposalError::NoMasks),
        1 => Ok(0),
        _ => selector.select(request, transcript),
    }
}

pub(crate) fn region_prompt(description: &str, layout: &GridLayout) -> String {
    let last = layout.cells.last().map(|(l, _)| l.as_str()).unwrap_or("A1");
    format!(
        "You are helping a robot learn the skill: \"{description}\".\n\
         The attached frames show one successful execution. The final image is the first frame \
         overlaid with a {rows}x{cols} grid whose cells are labeled A1 through {last} \
         (rows are letters, columns are numbers).\n\
         First describe the object the robot manipulates and the specific part it interacts with. \
         Then list the grid cells covering that part.\n\
         End your answer with a fenced block:\n\
         ```json\n{{\"object\": \"...\", \"part\": \"...\", \"cells\": [\"B3\", \"B4\"]}}\n```",
        rows = layout.spec.rows,
        cols = layout.spec.cols,
    )
}

pub(crate) fn mask_prompt(proposal: &RegionProposal, mask_count: usize) -> String {
    format!(
        "The image now shows {mask_count} candidate part masks, each tinted and numbered 0 to {}.\n\
         Choose the single mask that best covers the {} of the {}, where task-relevant keypoints lie.\n\
         Answer with a fenced block:\n```json\n{{\"mask\": 0}}\n```",
        mask_count.saturating_sub(1),
        if proposal.part_description.is_empty() { "relevant part" } else { &proposal.part_description },
        if proposal.object_description.is_empty() { "object" } else { &proposal.object_description },
    )
}

/// Source of raw response text for one attempt. `feedback` carries the parse
/// error of the previous attempt.
pub(crate) trait Responder {
    fn respond(&mut self, attempt: u32, feedback: Option<&ParseError>) -> Result<String, ProposalError>;
}

impl<F> Responder for F
where
    F: FnMut(u32, Option<&ParseError>) -> Result<String, ProposalError>,
{
    fn respond(&mut self, attempt: u32, feedback: Option<&ParseError>) -> Result<String, ProposalError> {
        self(attempt, feedback)
    }
}

pub(crate) struct Exchange<'a> {
    pub round: u32,
    pub kind: RequestKind,
    pub prompt: &'a str,
    pub images: Vec<String>,
    pub max_attempts: u32,
}

/// Asks up to `max_attempts` times, logging every exchange, until the
/// response parses.
pub(crate) fn run_exchange<T, P>(
    exchange: Exchange<'_>,
    transcript: &mut Transcript,
    responder: &mut dyn Responder,
    parse: P,
) -> Result<T, ProposalError>
where
    P: Fn(&str) -> Result<(T, serde_json::Value), ParseError>,
{
    let mut last: Option<ParseError> = None;
    for attempt in 1..=exchange.max_attempts.max(1) {
        let raw = responder.respond(attempt, last.as_ref())?;
        match parse(&raw) {
            Ok((value, json)) => {
                transcript.append(
                    exchange.round,
                    exchange.kind,
                    attempt,
                    exchange.prompt,
                    exchange.images.clone(),
                    &raw,
                    Some(json),
                    None,
                );
                return Ok(value);
            }
            Err(e) => {
                transcript.append(
                    exchange.round,
                    exchange.kind,
                    attempt,
                    exchange.prompt,
                    exchange.images.clone(),
                    &raw,
                    None,
                    Some(e.to_string()),
                );
                last = Some(e);
            }
        }
    }
    Err(ProposalError::Parse(last.expect("at least one attempt")))
}

pub(crate) fn region_parser(
    layout: &GridLayout,
) -> impl Fn(&str) -> Result<(RegionProposal, serde_json::Value), ParseError> + '_ {
    move |raw| {
        let parsed = parse_region_response(raw, &layout.spec)?;
        let json = serde_json::json!({
            "object": parsed.object,
            "part": parsed.part,
            "cells": parsed.cells,
        });
        Ok((
            RegionProposal {
                cells: parsed.cells,
                rationale: rationale(raw),
                object_description: parsed.object,
                part_description: parsed.part,
            },
            json,
        ))
    }
}

pub(crate) fn mask_parser(mask_count: usize) -> impl Fn(&str) -> Result<(usize, serde_json::Value), ParseError> {
    move |raw| {
        let index = parse_mask_response(raw, mask_count)?;
        Ok((index, serde_json::json!({ "mask": index })))
    }
}

pub(crate) fn frame_refs(request: &RegionRequest<'_>) -> Vec<String> {
    let mut refs: Vec<String> = request.frames.iter().map(|(i, _)| format!("video:{i}")).collect();
    refs.push(format!("grid_overlay:round{}", request.round));
    refs
}
