//! Deterministic scripted backend: replays canned responses in order.
//!
//! Each transcript entry carries a matcher on (agent, step). A call must
//! match the entry under the cursor exactly; anything else is an error, so
//! tests fail loudly instead of drifting.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatResponse, GatewayError, Usage};
use crate::corpus::CorpusError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matcher {
    pub agent: String,
    pub step: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    #[serde(rename = "match")]
    pub matcher: Matcher,
    pub response: String,
}

impl TranscriptEntry {
    pub fn new(agent: &str, step: u32, response: impl Into<String>) -> Self {
        TranscriptEntry {
            matcher: Matcher {
                agent: agent.to_string(),
                step,
            },
            response: response.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScriptedTranscript {
    pub entries: Vec<TranscriptEntry>,
}

impl ScriptedTranscript {
    pub fn new(entries: Vec<TranscriptEntry>) -> Self {
        ScriptedTranscript { entries }
    }

    /// Loads a JSONL file, one `{"match": {...}, "response": ...}` per line.
    pub fn from_jsonl(path: &Path) -> Result<Self, CorpusError> {
        if !path.is_file() {
            return Err(CorpusError::MissingFile(path.to_path_buf()));
        }
        let raw = fs::read_to_string(path).map_err(|e| CorpusError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let entries = raw
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str(l).map_err(|e| CorpusError::Parse {
                    path: path.to_path_buf(),
                    source: e,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(ScriptedTranscript { entries })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            out.push_str(&serde_json::to_string(entry).expect("entry serializes"));
            out.push('\n');
        }
        out
    }
}

/// One replay cursor over a transcript. Safe to share: the cursor is
/// internally locked, so a session can serve interleaved callers (e.g. the
/// generation agents and then the judge).
#[derive(Debug)]
pub struct ScriptedSession {
    entries: Vec<TranscriptEntry>,
    cursor: Mutex<usize>,
}

impl ScriptedSession {
    pub fn new(transcript: ScriptedTranscript) -> Self {
        ScriptedSession {
            entries: transcript.entries,
            cursor: Mutex::new(0),
        }
    }

    pub fn from_jsonl(path: &Path) -> Result<Self, CorpusError> {
        Ok(ScriptedSession::new(ScriptedTranscript::from_jsonl(path)?))
    }

    /// True once every entry has been consumed.
    pub fn finished(&self) -> bool {
        *self.cursor.lock().unwrap() >= self.entries.len()
    }

    pub fn remaining(&self) -> usize {
        self.entries.len() - *self.cursor.lock().unwrap()
    }
}

impl ChatBackend for ScriptedSession {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let mut cursor = self.cursor.lock().unwrap();
        let entry = self
            .entries
            .get(*cursor)
            .ok_or_else(|| GatewayError::TranscriptExhausted {
                agent: req.tag.agent.clone(),
                step: req.tag.step,
            })?;
        if entry.matcher.agent != req.tag.agent || entry.matcher.step != req.tag.step {
            return Err(GatewayError::MatcherMismatch {
                expected_agent: entry.matcher.agent.clone(),
                expected_step: entry.matcher.step,
                agent: req.tag.agent.clone(),
                step: req.tag.step,
            });
        }
        *cursor += 1;
        Ok(ChatResponse {
            text: entry.response.clone(),
            usage: Usage::default(),
        })
    }
}

/// Directory of transcripts, one file per session key (`<key>.jsonl`).
#[derive(Debug, Clone)]
pub struct TranscriptStore {
    dir: PathBuf,
}

impl TranscriptStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        TranscriptStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Opens a fresh session (cursor at zero) for a key.
    pub fn open(&self, key: &str) -> Result<ScriptedSession, CorpusError> {
        ScriptedSession::from_jsonl(&self.dir.join(format!("{key}.jsonl")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{CallTag, Decoding};

    fn req(agent: &str, step: u32) -> ChatRequest {
        ChatRequest {
            tag: CallTag::new(agent, step),
            system_prompt: String::new(),
            turns: vec![],
            decoding: Decoding::default(),
        }
    }

    #[test]
    fn replays_in_order_then_exhausts() {
        let session = ScriptedSession::new(ScriptedTranscript::new(vec![
            TranscriptEntry::new("seeker", 0, "A"),
            TranscriptEntry::new("inspector", 0, "B"),
        ]));
        assert_eq!(session.send(&req("seeker", 0)).unwrap().text, "A");
        assert_eq!(session.send(&req("inspector", 0)).unwrap().text, "B");
        assert!(session.finished());
        let err = session.send(&req("answer", 0)).unwrap_err();
        assert!(matches!(err, GatewayError::TranscriptExhausted { .. }));
    }

    #[test]
    fn mismatched_caller_is_an_error() {
        let session = ScriptedSession::new(ScriptedTranscript::new(vec![TranscriptEntry::new(
            "seeker", 0, "A",
        )]));
        let err = session.send(&req("inspector", 0)).unwrap_err();
        assert!(matches!(
            err,
            GatewayError::MatcherMismatch { expected_agent, agent, .. }
                if expected_agent == "seeker" && agent == "inspector"
        ));
        // The failed call did not advance the cursor.
        assert_eq!(session.remaining(), 1);
        assert_eq!(session.send(&req("seeker", 0)).unwrap().text, "A");
    }

    #[test]
    fn jsonl_round_trip() {
        let transcript = ScriptedTranscript::new(vec![
            TranscriptEntry::new("seeker", 0, r#"{"reason":"r","summary":"s","choice":[0]}"#),
            TranscriptEntry::new("judge", 0, "5"),
        ]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        fs::write(&path, transcript.to_jsonl()).unwrap();
        let loaded = ScriptedTranscript::from_jsonl(&path).unwrap();
        assert_eq!(loaded, transcript);

        let store = TranscriptStore::new(dir.path());
        assert!(store.open("t").is_ok());
        assert!(matches!(
            store.open("missing"),
            Err(CorpusError::MissingFile(_))
        ));
    }
}
