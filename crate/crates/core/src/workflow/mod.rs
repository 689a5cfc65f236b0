//! The seeker/inspector/answer loop.
//!
//! The seeker scans thumbnails of the remaining candidates and selects
//! pages; selected pages leave the candidate pool, so the pool shrinks
//! monotonically. The inspector reviews the selection (plus pages retained
//! from its previous round) at full resolution and either stores a draft
//! answer or sends feedback that steers the next seeker round. The answer
//! agent accepts a draft whose references cover the whole inspection set
//! and otherwise makes one consistency-checking call over the referenced
//! pages.
//!
//! The inspection set is the seeker's latest selections plus retained
//! pages. (A broader reading would inspect the full candidate set; this
//! engine inspects selections.)

mod prompts;
mod trace;

pub(crate) use prompts::corrective_turns;
pub use prompts::naive_request;
pub use trace::{transcript_from_trace, Trace, TraceEvent};

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::corpus::PageId;
use crate::gateway::{
    parse_agent_json, AgentMessage, AgentMessageKind, ChatRequest, Gateway, GatewayError,
};
use crate::retrieval::RetrievalResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkflowLimits {
    /// Maximum seeker/inspector rounds before the loop is cut off.
    pub max_rounds: u32,
    /// Character cap on the seeker memory; oldest summaries evicted first.
    pub memory_cap_chars: usize,
    /// Corrective re-prompts per call after an unparseable reply.
    pub parse_retries: u32,
    /// Include few-shot exemplars in agent prompts.
    pub few_shot: bool,
}

impl Default for WorkflowLimits {
    fn default() -> Self {
        WorkflowLimits {
            max_rounds: 5,
            memory_cap_chars: 2000,
            parse_retries: 2,
            few_shot: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkflowStatus {
    Seeking,
    Inspecting,
    Answering,
    Done,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The inspector judged its information sufficient and a final answer
    /// was produced through the consistency rule.
    InspectorSufficient,
    /// The seeker ran out of candidates (or declined to select) without a draft.
    SeekerExhausted,
    /// The round cap cut the loop off.
    RoundCap,
    /// A gateway or parse failure ended the run; the trace is partial.
    Aborted,
}

/// Draft answer stored by the inspector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draft {
    pub answer: String,
    pub reference: Vec<PageId>,
}

/// Bounded FIFO of seeker summaries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Memory {
    entries: VecDeque<String>,
    cap_chars: usize,
}

impl Memory {
    pub fn new(cap_chars: usize) -> Self {
        Memory {
            entries: VecDeque::new(),
            cap_chars,
        }
    }

    pub fn push(&mut self, summary: &str) {
        let summary = summary.trim();
        if summary.is_empty() {
            return;
        }
        self.entries.push_back(summary.to_string());
        while self.char_len() > self.cap_chars && self.entries.len() > 1 {
            self.entries.pop_front();
        }
        if self.char_len() > self.cap_chars {
            // A single over-long summary is cut at the cap.
            let entry = self.entries.back_mut().expect("one entry left");
            let cut = entry
                .char_indices()
                .nth(self.cap_chars)
                .map(|(byte, _)| byte)
                .unwrap_or(entry.len());
            entry.truncate(cut);
        }
    }

    /// Characters of the joined text, which is what the cap bounds.
    pub fn char_len(&self) -> usize {
        let joined: usize = self.entries.iter().map(|e| e.chars().count()).sum();
        joined + self.entries.len().saturating_sub(1)
    }

    pub fn as_text(&self) -> String {
        self.entries.iter().cloned().collect::<Vec<_>>().join("\n")
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The evolving state of one query's agent loop.
#[derive(Debug, Clone)]
pub struct WorkflowState {
    pub query_id: String,
    pub query: String,
    pub step: u32,
    /// Candidate pages still available to the seeker, in retrieval order.
    pub candidates: Vec<PageId>,
    /// Pages the seeker selected in the current round.
    pub selected_last: Vec<PageId>,
    /// Pages the inspector retained for the next round.
    pub retained: Vec<PageId>,
    pub memory: Memory,
    pub feedback: Option<String>,
    pub draft: Option<Draft>,
    pub status: WorkflowStatus,
    pub trace: Trace,
    inspected_last: Vec<PageId>,
    all_selected: BTreeSet<PageId>,
    pages_inspected: BTreeSet<PageId>,
    rounds: u32,
    last_summary: Option<String>,
}

impl WorkflowState {
    pub fn new(query_id: &str, query: &str, candidates: Vec<PageId>) -> Self {
        let mut state = WorkflowState {
            query_id: query_id.to_string(),
            query: query.to_string(),
            step: 0,
            candidates,
            selected_last: Vec::new(),
            retained: Vec::new(),
            memory: Memory::new(WorkflowLimits::default().memory_cap_chars),
            feedback: None,
            draft: None,
            status: WorkflowStatus::Seeking,
            trace: Trace::default(),
            inspected_last: Vec::new(),
            all_selected: BTreeSet::new(),
            pages_inspected: BTreeSet::new(),
            rounds: 0,
            last_summary: None,
        };
        state.push_state_update();
        state
    }

    pub fn with_memory_cap(mut self, cap_chars: usize) -> Self {
        self.memory = Memory::new(cap_chars);
        self
    }

    /// Inspection set for the current round: latest selections first, then
    /// retained pages not already present.
    pub fn inspection_set(&self) -> Vec<PageId> {
        let mut set = self.selected_last.clone();
        for page in &self.retained {
            if !set.contains(page) {
                set.push(page.clone());
            }
        }
        set
    }

    /// Completed inspector rounds.
    pub fn rounds(&self) -> u32 {
        self.rounds
    }

    /// Distinct pages shown to the inspector at full resolution.
    pub fn pages_inspected(&self) -> &BTreeSet<PageId> {
        &self.pages_inspected
    }

    fn push_state_update(&mut self) {
        self.trace.push(TraceEvent::StateUpdate {
            step: self.step,
            status: self.status,
            candidates: self.candidates.clone(),
            selected_last: self.selected_last.clone(),
            retained: self.retained.clone(),
            memory_chars: self.memory.char_len(),
            feedback: self.feedback.clone(),
        });
    }

    /// Maps reply indices onto `images`, dropping out-of-range ones with a
    /// warning instead of aborting.
    fn map_indices(
        indices: &[usize],
        images: &[PageId],
        warnings: &mut Vec<String>,
    ) -> Vec<PageId> {
        let mut out = Vec::with_capacity(indices.len());
        for &idx in indices {
            match images.get(idx) {
                Some(page) => out.push(page.clone()),
                None => warnings.push(format!(
                    "ignored out-of-range image index {idx} ({} images shown)",
                    images.len()
                )),
            }
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WorkflowError {
    #[error("retrieval produced no pages")]
    EmptyRetrieval,
}

/// Fatal call failure; the workflow records it and terminates as aborted.
#[derive(Debug)]
pub struct WorkflowAbort {
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeekerOutcome {
    /// At least one candidate was selected; the inspector runs next.
    Selected,
    /// Empty (or fully out-of-range) choice: no further relevant images.
    Exhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InspectorOutcome {
    /// Draft stored; the answer agent runs next.
    DraftStored,
    /// Feedback given; back to the seeker with `step + 1`.
    FeedbackGiven,
}

/// Final answer plus whether the consistency rule needed a model call.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerOutcome {
    pub answer: String,
    pub reference: Vec<PageId>,
    pub extra_call: bool,
}

/// Result of one full workflow run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowResult {
    pub answer: String,
    pub reference: Vec<PageId>,
    pub rounds: u32,
    pub termination: Termination,
    pub best_effort: bool,
    pub abort_reason: Option<String>,
    pub pages_inspected: Vec<PageId>,
    pub trace: Trace,
}

enum CallKind {
    Seeker,
    Inspector,
    Answer,
}

impl CallKind {
    #[allow(clippy::too_many_arguments)]
    fn event(
        &self,
        step: u32,
        attempt: u32,
        prompt_hash: String,
        images: Vec<PageId>,
        raw_response: String,
        parsed: Option<AgentMessage>,
        warnings: Vec<String>,
    ) -> TraceEvent {
        match self {
            CallKind::Seeker => TraceEvent::SeekerCall {
                step,
                attempt,
                prompt_hash,
                images,
                raw_response,
                parsed,
                warnings,
            },
            CallKind::Inspector => TraceEvent::InspectorCall {
                step,
                attempt,
                prompt_hash,
                images,
                raw_response,
                parsed,
                warnings,
            },
            CallKind::Answer => TraceEvent::AnswerCall {
                step,
                attempt,
                prompt_hash,
                images,
                raw_response,
                parsed,
                warnings,
            },
        }
    }
}

struct ParsedCall {
    message: AgentMessage,
    raw: String,
    prompt_hash: String,
    attempt: u32,
    images: Vec<PageId>,
}

/// Sends a request and parses the reply, re-prompting with a corrective
/// instruction up to `parse_retries` times. Failed attempts are traced;
/// the successful attempt's event is pushed by the caller (it may add
/// index-mapping warnings).
fn call_and_parse(
    trace: &mut Trace,
    gateway: &Gateway,
    limits: &WorkflowLimits,
    kind: &CallKind,
    mut req: ChatRequest,
    expected: &[AgentMessageKind],
) -> Result<ParsedCall, WorkflowAbort> {
    let images = req.image_pages();
    let step = req.tag.step;
    let mut attempt: u32 = 0;
    loop {
        let prompt_hash = req.prompt_hash();
        let response = match gateway.chat(&req) {
            Ok(r) => r,
            Err(err) => {
                trace.push(kind.event(
                    step,
                    attempt,
                    prompt_hash,
                    images.clone(),
                    String::new(),
                    None,
                    vec![format!("gateway error: {err}")],
                ));
                return Err(WorkflowAbort {
                    message: gateway_abort_message(&err),
                });
            }
        };
        match parse_agent_json(&response.text, expected) {
            Ok(message) => {
                return Ok(ParsedCall {
                    message,
                    raw: response.text,
                    prompt_hash,
                    attempt,
                    images,
                })
            }
            Err(parse_err) => {
                trace.push(kind.event(
                    step,
                    attempt,
                    prompt_hash,
                    images.clone(),
                    response.text.clone(),
                    None,
                    vec![format!("parse error: {parse_err}")],
                ));
                if attempt >= limits.parse_retries {
                    return Err(WorkflowAbort {
                        message: format!(
                            "reply unparseable after {} attempt(s): {parse_err}",
                            attempt + 1
                        ),
                    });
                }
                req.turns.extend(prompts::corrective_turns(
                    &response.text,
                    &parse_err.to_string(),
                ));
                attempt += 1;
            }
        }
    }
}

fn gateway_abort_message(err: &GatewayError) -> String {
    format!("gateway error: {err}")
}

/// One seeker round: select from candidate thumbnails, shrink the pool,
/// extend the memory.
pub fn run_seeker_step(
    state: &mut WorkflowState,
    gateway: &Gateway,
    limits: &WorkflowLimits,
) -> Result<SeekerOutcome, WorkflowAbort> {
    debug_assert_eq!(state.status, WorkflowStatus::Seeking);
    debug_assert!(!state.candidates.is_empty());
    let memory = state.memory.as_text();
    let req = prompts::seeker_request(
        &state.query,
        &state.candidates,
        (!memory.is_empty()).then_some(memory.as_str()),
        state.feedback.as_deref(),
        state.step,
        limits.few_shot,
    );
    let call = call_and_parse(
        &mut state.trace,
        gateway,
        limits,
        &CallKind::Seeker,
        req,
        &[AgentMessageKind::SeekerChoice],
    )?;
    let AgentMessage::SeekerChoice {
        summary, choice, ..
    } = call.message.clone()
    else {
        unreachable!("parser returned the expected variant");
    };
    let mut warnings = Vec::new();
    let selected = WorkflowState::map_indices(&choice, &call.images, &mut warnings);
    state.trace.push(CallKind::Seeker.event(
        state.step,
        call.attempt,
        call.prompt_hash,
        call.images,
        call.raw,
        Some(call.message),
        warnings,
    ));

    state.memory.push(&summary);
    state.last_summary = Some(summary);
    if selected.is_empty() {
        state.push_state_update();
        return Ok(SeekerOutcome::Exhausted);
    }
    state.candidates.retain(|page| !selected.contains(page));
    state.all_selected.extend(selected.iter().cloned());
    state.selected_last = selected;
    state.status = WorkflowStatus::Inspecting;
    debug_assert!(state
        .candidates
        .iter()
        .all(|page| !state.all_selected.contains(page)));
    state.push_state_update();
    Ok(SeekerOutcome::Selected)
}

/// One inspector round over the inspection set at full resolution: either
/// a draft answer or feedback plus retained pages.
pub fn run_inspector_step(
    state: &mut WorkflowState,
    gateway: &Gateway,
    limits: &WorkflowLimits,
) -> Result<InspectorOutcome, WorkflowAbort> {
    debug_assert_eq!(state.status, WorkflowStatus::Inspecting);
    let inspection = state.inspection_set();
    debug_assert!(!inspection.is_empty());
    let call_step = state.step;
    let req = prompts::inspector_request(
        &state.query,
        &inspection,
        state.last_summary.as_deref(),
        call_step,
        limits.few_shot,
    );
    let call = call_and_parse(
        &mut state.trace,
        gateway,
        limits,
        &CallKind::Inspector,
        req,
        &[
            AgentMessageKind::InspectorAnswer,
            AgentMessageKind::InspectorFeedback,
        ],
    )?;
    let message = call.message.clone();
    let mut warnings = Vec::new();
    let outcome = match &message {
        AgentMessage::InspectorAnswer {
            answer, reference, ..
        } => {
            let reference = WorkflowState::map_indices(reference, &call.images, &mut warnings);
            state.draft = Some(Draft {
                answer: answer.clone(),
                reference,
            });
            state.status = WorkflowStatus::Answering;
            InspectorOutcome::DraftStored
        }
        AgentMessage::InspectorFeedback {
            information,
            choice,
            ..
        } => {
            let retained = WorkflowState::map_indices(choice, &call.images, &mut warnings);
            state.feedback = Some(information.clone());
            state.retained = retained;
            state.status = WorkflowStatus::Seeking;
            state.step += 1;
            InspectorOutcome::FeedbackGiven
        }
        _ => unreachable!("parser returned an expected variant"),
    };
    state.trace.push(CallKind::Inspector.event(
        call_step,
        call.attempt,
        call.prompt_hash,
        call.images,
        call.raw,
        Some(message),
        warnings,
    ));
    state.inspected_last = inspection;
    state
        .pages_inspected
        .extend(state.inspected_last.iter().cloned());
    state.rounds += 1;
    debug_assert!(state
        .retained
        .iter()
        .all(|p| state.inspected_last.contains(p)));
    state.push_state_update();
    Ok(outcome)
}

/// Final consistency check. A draft whose references equal the whole
/// inspection set is accepted verbatim without a model call; a proper
/// subset triggers exactly one answer-agent call, whose reply wins.
pub fn run_answer_agent(
    state: &mut WorkflowState,
    gateway: &Gateway,
    limits: &WorkflowLimits,
) -> Result<AnswerOutcome, WorkflowAbort> {
    debug_assert_eq!(state.status, WorkflowStatus::Answering);
    let draft = state.draft.clone().expect("answer agent needs a draft");
    let draft_set: BTreeSet<&PageId> = draft.reference.iter().collect();
    let inspected_set: BTreeSet<&PageId> = state.inspected_last.iter().collect();
    if draft_set == inspected_set {
        state.status = WorkflowStatus::Done;
        state.push_state_update();
        return Ok(AnswerOutcome {
            answer: draft.answer,
            reference: draft.reference,
            extra_call: false,
        });
    }

    let req = prompts::answer_request(&state.query, Some(&draft.answer), &draft.reference);
    let call = call_and_parse(
        &mut state.trace,
        gateway,
        limits,
        &CallKind::Answer,
        req,
        &[AgentMessageKind::FinalAnswer],
    )?;
    let AgentMessage::FinalAnswer {
        answer, reference, ..
    } = call.message.clone()
    else {
        unreachable!("parser returned the expected variant");
    };
    let mut warnings = Vec::new();
    let reference = WorkflowState::map_indices(&reference, &call.images, &mut warnings);
    state.trace.push(CallKind::Answer.event(
        0,
        call.attempt,
        call.prompt_hash,
        call.images,
        call.raw,
        Some(call.message),
        warnings,
    ));
    state.status = WorkflowStatus::Done;
    state.push_state_update();
    Ok(AnswerOutcome {
        answer,
        reference,
        extra_call: true,
    })
}

/// Best-effort answer over whatever the inspector last saw, used when the
/// loop ends without a draft.
fn best_effort_answer(
    state: &mut WorkflowState,
    gateway: &Gateway,
    limits: &WorkflowLimits,
) -> Result<(String, Vec<PageId>), WorkflowAbort> {
    let pages = state.inspection_set_for_best_effort();
    let req = prompts::answer_request(&state.query, None, &pages);
    let call = call_and_parse(
        &mut state.trace,
        gateway,
        limits,
        &CallKind::Answer,
        req,
        &[AgentMessageKind::FinalAnswer],
    )?;
    let AgentMessage::FinalAnswer {
        answer, reference, ..
    } = call.message.clone()
    else {
        unreachable!("parser returned the expected variant");
    };
    let mut warnings = Vec::new();
    let reference = WorkflowState::map_indices(&reference, &call.images, &mut warnings);
    state.trace.push(CallKind::Answer.event(
        0,
        call.attempt,
        call.prompt_hash,
        call.images,
        call.raw,
        Some(call.message),
        warnings,
    ));
    Ok((answer, reference))
}

impl WorkflowState {
    /// Retained pages plus the last inspection set (retained is always a
    /// subset of it, so this is the last inspection set when one exists).
    fn inspection_set_for_best_effort(&self) -> Vec<PageId> {
        let mut pages = self.inspected_last.clone();
        for page in &self.retained {
            if !pages.contains(page) {
                pages.push(page.clone());
            }
        }
        pages
    }
}

/// Runs the full loop for one query over its retrieval context.
pub fn run_workflow(
    query_id: &str,
    query: &str,
    retrieval: &RetrievalResult,
    gateway: &Gateway,
    limits: &WorkflowLimits,
) -> Result<WorkflowResult, WorkflowError> {
    if retrieval.merged.is_empty() {
        return Err(WorkflowError::EmptyRetrieval);
    }
    let mut state = WorkflowState::new(query_id, query, retrieval.merged.clone())
        .with_memory_cap(limits.memory_cap_chars);

    let (termination, answer, reference, best_effort, error) = loop {
        match state.status {
            WorkflowStatus::Seeking => {
                if state.step >= limits.max_rounds {
                    break finish_without_draft(&mut state, gateway, limits, Termination::RoundCap);
                }
                if state.candidates.is_empty() {
                    break finish_without_draft(
                        &mut state,
                        gateway,
                        limits,
                        Termination::SeekerExhausted,
                    );
                }
                match run_seeker_step(&mut state, gateway, limits) {
                    Ok(SeekerOutcome::Selected) => {}
                    Ok(SeekerOutcome::Exhausted) => {
                        if state.draft.is_some() {
                            state.status = WorkflowStatus::Answering;
                        } else {
                            break finish_without_draft(
                                &mut state,
                                gateway,
                                limits,
                                Termination::SeekerExhausted,
                            );
                        }
                    }
                    Err(abort) => break aborted(abort),
                }
            }
            WorkflowStatus::Inspecting => {
                if let Err(abort) = run_inspector_step(&mut state, gateway, limits) {
                    break aborted(abort);
                }
            }
            WorkflowStatus::Answering => match run_answer_agent(&mut state, gateway, limits) {
                Ok(outcome) => {
                    break (
                        Termination::InspectorSufficient,
                        outcome.answer,
                        outcome.reference,
                        false,
                        None,
                    )
                }
                Err(abort) => break aborted(abort),
            },
            WorkflowStatus::Done | WorkflowStatus::Aborted => {
                unreachable!("loop exits before reaching a terminal status")
            }
        }
    };

    state.status = if matches!(termination, Termination::Aborted) {
        WorkflowStatus::Aborted
    } else {
        WorkflowStatus::Done
    };
    state.trace.push(TraceEvent::Termination {
        termination,
        rounds: state.rounds,
        answer: answer.clone(),
        reference: reference.clone(),
        best_effort,
        error: error.clone(),
    });
    Ok(WorkflowResult {
        answer,
        reference,
        rounds: state.rounds,
        termination,
        best_effort,
        abort_reason: error,
        pages_inspected: state.pages_inspected.iter().cloned().collect(),
        trace: state.trace,
    })
}

type LoopExit = (Termination, String, Vec<PageId>, bool, Option<String>);

fn aborted(abort: WorkflowAbort) -> LoopExit {
    (
        Termination::Aborted,
        String::new(),
        Vec::new(),
        false,
        Some(abort.message),
    )
}

fn finish_without_draft(
    state: &mut WorkflowState,
    gateway: &Gateway,
    limits: &WorkflowLimits,
    termination: Termination,
) -> LoopExit {
    match best_effort_answer(state, gateway, limits) {
        Ok((answer, reference)) => (termination, answer, reference, true, None),
        Err(abort) => aborted(abort),
    }
}
