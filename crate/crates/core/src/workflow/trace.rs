//! Append-only event log for one workflow run.
//!
//! Every model call lands in the trace with its prompt hash, raw response
//! and parsed message (one event per attempt, including failed parses), so
//! a trace can be replayed through the scripted backend to reproduce the
//! identical run.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, PageId};
use crate::gateway::{AgentMessage, ScriptedTranscript, TranscriptEntry};

use super::{Termination, WorkflowStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    SeekerCall {
        step: u32,
        attempt: u32,
        prompt_hash: String,
        images: Vec<PageId>,
        raw_response: String,
        parsed: Option<AgentMessage>,
        warnings: Vec<String>,
    },
    InspectorCall {
        step: u32,
        attempt: u32,
        prompt_hash: String,
        images: Vec<PageId>,
        raw_response: String,
        parsed: Option<AgentMessage>,
        warnings: Vec<String>,
    },
    AnswerCall {
        step: u32,
        attempt: u32,
        prompt_hash: String,
        images: Vec<PageId>,
        raw_response: String,
        parsed: Option<AgentMessage>,
        warnings: Vec<String>,
    },
    StateUpdate {
        step: u32,
        status: WorkflowStatus,
        candidates: Vec<PageId>,
        selected_last: Vec<PageId>,
        retained: Vec<PageId>,
        memory_chars: usize,
        feedback: Option<String>,
    },
    Termination {
        termination: Termination,
        rounds: u32,
        answer: String,
        reference: Vec<PageId>,
        best_effort: bool,
        error: Option<String>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn push(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    /// One JSON object per line, in event order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for event in &self.events {
            out.push_str(&serde_json::to_string(event).expect("trace event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        fs::write(path, self.to_jsonl()).map_err(|e| CorpusError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn from_jsonl(raw: &str) -> Result<Self, serde_json::Error> {
        let events = raw
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Trace { events })
    }
}

/// Rebuilds a scripted transcript from the model calls in a trace. Running
/// the workflow against it must reproduce the trace byte for byte.
pub fn transcript_from_trace(trace: &Trace) -> ScriptedTranscript {
    let mut entries = Vec::new();
    for event in &trace.events {
        let (agent, step, raw) = match event {
            TraceEvent::SeekerCall {
                step, raw_response, ..
            } => ("seeker", *step, raw_response),
            TraceEvent::InspectorCall {
                step, raw_response, ..
            } => ("inspector", *step, raw_response),
            TraceEvent::AnswerCall {
                step, raw_response, ..
            } => ("answer", *step, raw_response),
            _ => continue,
        };
        entries.push(TranscriptEntry::new(agent, step, raw.clone()));
    }
    ScriptedTranscript::new(entries)
}
