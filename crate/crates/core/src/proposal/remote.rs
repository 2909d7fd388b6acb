//! Generic "text + images in, text out" completion client.
//!
//! Requests are `POST {url}` with a bearer token and a JSON body
//! `{model, messages: [{role, content: [{type: "text", text} | {type: "image", media_type, data}]}]}`.
//! The reply text is read from `choices[0].message.content`, `content[0].text`,
//! `output_text` or `text`, whichever is present first.

use std::io::Cursor;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::backend::{
    frame_refs, mask_parser, mask_prompt, region_parser, region_prompt, run_exchange, Exchange, MaskRequest,
    MaskSelector, RegionProposal, RegionProposer, RegionRequest,
};
use super::parse::ParseError;
use super::transcript::{RequestKind, Transcript};
use super::ProposalError;

pub const DEFAULT_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub url: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: String,
    pub model: String,
    pub timeout_secs: u64,
    pub max_attempts: u32,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8080/v1/complete".into(),
            token_env: "KPDISTILL_BACKEND_TOKEN".into(),
            model: "default".into(),
            timeout_secs: 120,
            max_attempts: DEFAULT_ATTEMPTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Part {
    Text(String),
    Image(String),
}

#[derive(Debug, Clone, PartialEq)]
struct Message {
    role: &'static str,
    content: Vec<Part>,
}

impl Message {
    fn to_json(&self) -> Value {
        let content: Vec<Value> = self
            .content
            .iter()
            .map(|p| match p {
                Part::Text(t) => json!({"type": "text", "text": t}),
                Part::Image(b64) => json!({"type": "image", "media_type": "image/png", "data": b64}),
            })
            .collect();
        json!({"role": self.role, "content": content})
    }
}

/// One client per distillation session; the conversation carries over
/// between the region and mask queries and across re-prompts.
pub struct RemoteBackend {
    config: RemoteConfig,
    token: Option<String>,
    client: reqwest::blocking::Client,
    conversation: Vec<Message>,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, ProposalError> {
        let token = std::env::var(&config.token_env).ok();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ProposalError::Backend(e.to_string()))?;
        Ok(Self {
            config,
            token,
            client,
            conversation: Vec::new(),
        })
    }

    fn send(&mut self) -> Result<String, ProposalError> {
        let body = json!({
            "model": self.config.model,
            "messages": self.conversation.iter().map(Message::to_json).collect::<Vec<_>>(),
        });
        let mut req = self.client.post(&self.config.url).json(&body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| ProposalError::Backend(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| ProposalError::Backend(e.to_string()))?;
        if !status.is_success() {
            return Err(ProposalError::Backend(format!("HTTP {status}: {text}")));
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| ProposalError::Backend(format!("response is not JSON: {e}")))?;
        let reply = extract_reply(&value)
            .ok_or_else(|| ProposalError::Backend("response carries no reply text".into()))?;
        self.conversation.push(Message {
            role: "assistant",
            content: vec![Part::Text(reply.clone())],
        });
        Ok(reply)
    }

    /// Sends `first` on attempt 1, and a correction naming the parse error on
    /// later attempts.
    fn ask(&mut self, first: Message, attempt: u32, feedback: Option<&ParseError>) -> Result<String, ProposalError> {
        if attempt == 1 {
            self.conversation.push(first);
        } else {
            let err = feedback.map(|e| e.to_string()).unwrap_or_default();
            self.conversation.push(Message {
                role: "user",
                content: vec![Part::Text(format!(
                    "Your previous answer could not be used: {err}. Reply again and end with the fenced ```json block."
                ))],
            });
        }
        self.send()
    }
}

fn extract_reply(value: &Value) -> Option<String> {
    let candidates = [
        value.pointer("/choices/0/message/content"),
        value.pointer("/content/0/text"),
        value.get("output_text"),
        value.get("text"),
    ];
    candidates.into_iter().flatten().find_map(|v| v.as_str().map(str::to_string))
}

pub fn encode_png(color: &[[u8; 3]], width: usize, height: usize) -> Result<String, ProposalError> {
    let flat: Vec<u8> = color.iter().flatten().copied().collect();
    let img = image::RgbImage::from_raw(width as u32, height as u32, flat)
        .ok_or_else(|| ProposalError::InvalidConfig("raster size mismatch".into()))?;
    let mut bytes = Vec::new();
    img.write_to(&mut Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| ProposalError::Io(e.to_string()))?;
    Ok(base64::engine::general_purpose::STANDARD.encode(bytes))
}

impl RegionProposer for RemoteBackend {
    fn propose(&mut self, request: &RegionRequest<'_>, transcript: &mut Transcript) -> Result<RegionProposal, ProposalError> {
        let prompt = region_prompt(request.description, request.layout);
        let mut content = vec![Part::Text(prompt.clone())];
        for (_, frame) in &request.frames {
            content.push(Part::Image(encode_png(&frame.color, frame.width, frame.height)?));
        }
        let (w, h) = (request.layout.width, request.layout.height);
        content.push(Part::Image(encode_png(request.annotated, w, h)?));
        let first = Message { role: "user", content };
        let exchange = Exchange {
            round: request.round,
            kind: RequestKind::Region,
            prompt: &prompt,
            images: frame_refs(request),
            max_attempts: self.config.max_attempts,
        };
        let mut responder = |attempt: u32, feedback: Option<&ParseError>| self.ask(first.clone(), attempt, feedback);
        run_exchange(exchange, transcript, &mut responder, region_parser(request.layout))
    }

    fn notify_rejected(&mut self, round: u32, feedback: &str) {
        self.conversation.push(Message {
            role: "user",
            content: vec![Part::Text(format!(
                "The part chosen in round {round} was rejected: {feedback}. Choose a different part of the scene."
            ))],
        });
    }
}

impl MaskSelector for RemoteBackend {
    fn select(&mut self, request: &MaskRequest<'_>, transcript: &mut Transcript) -> Result<usize, ProposalError> {
        let prompt = mask_prompt(request.proposal, request.masks.len());
        let overlay = encode_png(request.overlay, request.image.width, request.image.height)?;
        let first = Message {
            role: "user",
            content: vec![Part::Text(prompt.clone()), Part::Image(overlay)],
        };
        let exchange = Exchange {
            round: request.round,
            kind: RequestKind::Mask,
            prompt: &prompt,
            images: vec![format!("mask_overlay:round{}", request.round)],
            max_attempts: self.config.max_attempts,
        };
        let mut responder = |attempt: u32, feedback: Option<&ParseError>| self.ask(first.clone(), attempt, feedback);
        run_exchange(exchange, transcript, &mut responder, mask_parser(request.masks.len()))
    }
}
