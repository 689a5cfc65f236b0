//! Uniform boundary to chat-completion backends.
//!
//! One trait, two implementations: an OpenAI-compatible HTTP client with
//! image attachments, and a scripted transcript player that makes every
//! agent flow deterministic and network-free. A retry/rate-limit wrapper
//! sits in front of either.

pub mod http;
pub mod limiter;
pub mod message;
pub mod scripted;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::PageId;

pub use http::{HttpBackend, ImageProvider};
pub use limiter::{ConcurrencyGate, RateLimiter};
pub use message::{parse_agent_json, AgentMessage, AgentMessageKind, ParseError};
pub use scripted::{ScriptedSession, ScriptedTranscript, TranscriptEntry, TranscriptStore};

/// Who is calling and at which workflow step; used by transcript matching
/// and trace records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallTag {
    pub agent: String,
    pub step: u32,
}

impl CallTag {
    pub fn new(agent: &str, step: u32) -> Self {
        CallTag {
            agent: agent.to_string(),
            step,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// Resolution hint for attached page images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageDetail {
    /// Long side capped at the thumbnail budget (default 512 px).
    Thumbnail,
    /// Long side capped at the full budget (default 2048 px).
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Part {
    Text {
        text: String,
    },
    Image {
        page_id: PageId,
        detail: ImageDetail,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub parts: Vec<Part>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: Option<u32>,
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding {
            temperature: 0.0,
            max_tokens: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub tag: CallTag,
    pub system_prompt: String,
    pub turns: Vec<Turn>,
    pub decoding: Decoding,
}

impl ChatRequest {
    /// Page ids of every image part, in prompt order. Index lists in agent
    /// replies refer to positions in this list.
    pub fn image_pages(&self) -> Vec<PageId> {
        self.turns
            .iter()
            .flat_map(|t| t.parts.iter())
            .filter_map(|p| match p {
                Part::Image { page_id, .. } => Some(page_id.clone()),
                Part::Text { .. } => None,
            })
            .collect()
    }

    /// Stable hash of the prompt content (everything except the call tag).
    pub fn prompt_hash(&self) -> String {
        let payload = serde_json::json!({
            "system_prompt": self.system_prompt,
            "turns": self.turns,
            "decoding": self.decoding,
        });
        let mut hasher = Sha256::new();
        hasher.update(payload.to_string().as_bytes());
        let digest = hasher.finalize();
        let mut out = String::with_capacity(64);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("context window exceeded: {0}")]
    ContextOverflow(String),
    #[error("backend rejected request: {0}")]
    BadRequest(String),
    #[error("scripted transcript exhausted at call ({agent}, {step})")]
    TranscriptExhausted { agent: String, step: u32 },
    #[error(
        "scripted transcript expected ({expected_agent}, {expected_step}), got ({agent}, {step})"
    )]
    MatcherMismatch {
        expected_agent: String,
        expected_step: u32,
        agent: String,
        step: u32,
    },
    #[error("no image available for page `{0}`")]
    ImageUnavailable(PageId),
}

impl GatewayError {
    fn is_transient(&self) -> bool {
        matches!(self, GatewayError::Transport { .. })
    }
}

/// Anything that can answer a chat request.
pub trait ChatBackend: Send + Sync {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

/// Transient-failure retry policy: exponential backoff starting at
/// `base_delay`, doubling per attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

/// Backend plus retry, rate-limit and concurrency policy.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    policy: RetryPolicy,
    limiter: Option<Arc<RateLimiter>>,
    gate: Option<Arc<ConcurrencyGate>>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, policy: RetryPolicy) -> Self {
        Gateway {
            backend,
            policy,
            limiter: None,
            gate: None,
        }
    }

    /// Scripted backends need no retries, limits or backoff.
    pub fn scripted(session: Arc<ScriptedSession>) -> Self {
        Gateway::new(
            session,
            RetryPolicy {
                max_retries: 0,
                base_delay: Duration::from_millis(0),
            },
        )
    }

    pub fn with_rate_limit(mut self, limiter: Arc<RateLimiter>) -> Self {
        self.limiter = Some(limiter);
        self
    }

    pub fn with_concurrency(mut self, gate: Arc<ConcurrencyGate>) -> Self {
        self.gate = Some(gate);
        self
    }

    /// Sends one request, retrying transient transport failures with
    /// exponential backoff. Client errors (4xx) are never retried.
    pub fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let _slot = self.gate.as_ref().map(|g| g.acquire());
        let mut attempt: u32 = 0;
        loop {
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            match self.backend.send(req) {
                Ok(resp) => return Ok(resp),
                Err(err) if err.is_transient() && attempt < self.policy.max_retries => {
                    let delay = self.policy.base_delay * 2u32.saturating_pow(attempt);
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(GatewayError::Transport { message, .. }) => {
                    return Err(GatewayError::Transport {
                        attempts: attempt + 1,
                        message,
                    })
                }
                Err(err) => return Err(err),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_hash_ignores_tag_but_not_content() {
        let mut req = ChatRequest {
            tag: CallTag::new("seeker", 0),
            system_prompt: "sys".into(),
            turns: vec![Turn {
                role: Role::User,
                parts: vec![Part::Text { text: "q".into() }],
            }],
            decoding: Decoding::default(),
        };
        let h1 = req.prompt_hash();
        req.tag = CallTag::new("inspector", 3);
        assert_eq!(req.prompt_hash(), h1);
        req.system_prompt.push('!');
        assert_ne!(req.prompt_hash(), h1);
    }

    #[test]
    fn image_pages_in_prompt_order() {
        let req = ChatRequest {
            tag: CallTag::new("seeker", 0),
            system_prompt: String::new(),
            turns: vec![Turn {
                role: Role::User,
                parts: vec![
                    Part::Image {
                        page_id: PageId::from("a#1"),
                        detail: ImageDetail::Thumbnail,
                    },
                    Part::Text {
                        text: "between".into(),
                    },
                    Part::Image {
                        page_id: PageId::from("b#2"),
                        detail: ImageDetail::Thumbnail,
                    },
                ],
            }],
            decoding: Decoding::default(),
        };
        let pages = req.image_pages();
        assert_eq!(pages, vec![PageId::from("a#1"), PageId::from("b#2")]);
    }
}
