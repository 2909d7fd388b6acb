//! Deterministic backend driven by a scenario file.
//!
//! ```toml
//! [[entry]]
//! round = 1
//! object = "cabinet"
//! part = "handle"
//! cells = ["C5", "C6"]
//! mask_index = 1
//! # fail = "region"   # or "mask": inject a backend failure
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::backend::{
    frame_refs, mask_parser, mask_prompt, region_parser, region_prompt, run_exchange, Exchange, MaskRequest,
    MaskSelector, RegionProposal, RegionProposer, RegionRequest,
};
use super::transcript::{RequestKind, Transcript};
use super::ProposalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectedFailure {
    Region,
    Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub round: u32,
    #[serde(default)]
    pub object: String,
    #[serde(default)]
    pub part: String,
    pub cells: Vec<String>,
    #[serde(default)]
    pub mask_index: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<InjectedFailure>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(rename = "entry", default)]
    pub entries: Vec<ScenarioEntry>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ProposalError> {
        toml::from_str(text).map_err(|e| ProposalError::Scenario(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn read(path: &Path) -> Result<Self, ProposalError> {
        let text = fs::read_to_string(path).map_err(|e| ProposalError::Scenario(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn write(&self, path: &Path) -> Result<(), ProposalError> {
        fs::write(path, self.to_toml()).map_err(|e| ProposalError::Io(e.to_string()))
    }
}

/// Replays scenario entries as if they were model responses.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    scenario: Scenario,
}

impl ScriptedBackend {
    pub fn new(scenario: Scenario) -> Self {
        Self { scenario }
    }

    fn entry(&self, round: u32) -> Result<&ScenarioEntry, ProposalError> {
        self.scenario
            .entries
            .iter()
            .find(|e| e.round == round)
            .ok_or_else(|| ProposalError::Backend(format!("scenario has no entry for round {round}")))
    }
}

impl RegionProposer for ScriptedBackend {
    fn propose(&mut self, request: &RegionRequest<'_>, transcript: &mut Transcript) -> Result<RegionProposal, ProposalError> {
        let entry = self.entry(request.round)?.clone();
        if entry.fail == Some(InjectedFailure::Region) {
            return Err(ProposalError::Backend(format!("injected region failure in round {}", request.round)));
        }
        let body = serde_json::json!({"object": entry.object, "part": entry.part, "cells": entry.cells});
        let raw = format!("Scripted proposal.\n```json\n{body}\n```");
        let prompt = region_prompt(request.description, request.layout);
        let exchange = Exchange {
            round: request.round,
            kind: RequestKind::Region,
            prompt: &prompt,
            images: frame_refs(request),
            max_attempts: 1,
        };
        let mut responder = |_: u32, _: Option<&_>| Ok(raw.clone());
        run_exchange(exchange, transcript, &mut responder, region_parser(request.layout))
    }
}

impl MaskSelector for ScriptedBackend {
    fn select(&mut self, request: &MaskRequest<'_>, transcript: &mut Transcript) -> Result<usize, ProposalError> {
        let entry = self.entry(request.round)?.clone();
        if entry.fail == Some(InjectedFailure::Mask) {
            return Err(ProposalError::Backend(format!("injected mask failure in round {}", request.round)));
        }
        let raw = format!("```json\n{{\"mask\": {}}}\n```", entry.mask_index);
        let prompt = mask_prompt(request.proposal, request.masks.len());
        let exchange = Exchange {
            round: request.round,
            kind: RequestKind::Mask,
            prompt: &prompt,
            images: vec![format!("mask_overlay:round{}", request.round)],
            max_attempts: 1,
        };
        let mut responder = |_: u32, _: Option<&_>| Ok(raw.clone());
        run_exchange(exchange, transcript, &mut responder, mask_parser(request.masks.len()))
    }
}
