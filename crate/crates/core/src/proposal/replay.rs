//! Backend that re-issues the responses recorded in a transcript.

use std::collections::VecDeque;

use super::backend::{
    frame_refs, mask_parser, mask_prompt, region_parser, region_prompt, run_exchange, Exchange, MaskRequest,
    MaskSelector, RegionProposal, RegionProposer, RegionRequest,
};
use super::transcript::{RequestKind, Transcript, TranscriptRecord};
use super::ProposalError;

/// Records are consumed strictly in order; a request whose round or kind does
/// not match the next record is an error, so replays cannot silently diverge.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    pending: VecDeque<TranscriptRecord>,
}

impl ReplayBackend {
    pub fn new(recorded: &Transcript) -> Self {
        Self {
            pending: recorded.records().iter().cloned().collect(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.pending.len()
    }

    /// Number of consecutive attempts recorded for the next request.
    fn attempts_for(&self, round: u32, kind: RequestKind) -> Result<u32, ProposalError> {
        let first = self
            .pending
            .front()
            .ok_or_else(|| ProposalError::Backend(format!("transcript exhausted at round {round} ({kind:?})")))?;
        if first.round != round || first.kind != kind {
            return Err(ProposalError::Backend(format!(
                "transcript diverged: expected round {round} {kind:?}, found round {} {:?}",
                first.round, first.kind
            )));
        }
        let mut n = 0u32;
        for r in &self.pending {
            if r.round != round || r.kind != kind || r.attempt != n + 1 {
                break;
            }
            n += 1;
        }
        Ok(n)
    }

    fn next_response(&mut self) -> Result<String, ProposalError> {
        self.pending
            .pop_front()
            .map(|r| r.response)
            .ok_or_else(|| ProposalError::Backend("transcript exhausted".into()))
    }
}

impl RegionProposer for ReplayBackend {
    fn propose(&mut self, request: &RegionRequest<'_>, transcript: &mut Transcript) -> Result<RegionProposal, ProposalError> {
        let attempts = self.attempts_for(request.round, RequestKind::Region)?;
        let prompt = region_prompt(request.description, request.layout);
        let exchange = Exchange {
            round: request.round,
            kind: RequestKind::Region,
            prompt: &prompt,
            images: frame_refs(request),
            max_attempts: attempts,
        };
        let mut responder = |_: u32, _: Option<&_>| self.next_response();
        run_exchange(exchange, transcript, &mut responder, region_parser(request.layout))
    }
}

impl MaskSelector for ReplayBackend {
    fn select(&mut self, request: &MaskRequest<'_>, transcript: &mut Transcript) -> Result<usize, ProposalError> {
        let attempts = self.attempts_for(request.round, RequestKind::Mask)?;
        let prompt = mask_prompt(request.proposal, request.masks.len());
        let exchange = Exchange {
            round: request.round,
            kind: RequestKind::Mask,
            prompt: &prompt,
            images: vec![format!("mask_overlay:round{}", request.round)],
            max_attempts: attempts,
        };
        let mut responder = |_: u32, _: Option<&_>| self.next_response();
        run_exchange(exchange, transcript, &mut responder, mask_parser(request.masks.len()))
    }
}
