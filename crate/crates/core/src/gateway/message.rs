//! Structured parsing of agent replies.
//!
//! Agents answer in JSON, usually wrapped in prose or code fences. The
//! parser pulls the first balanced JSON object out of the raw text and
//! validates it against the message shapes the caller expects. Shapes use
//! the exact field names of the agent protocol: `reason`/`summary`/`choice`
//! for the seeker, `reason`/`answer`/`reference` or
//! `reason`/`information`/`choice` for the inspector, and
//! `reason`/`answer`/`reference` for the final answer.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentMessageKind {
    SeekerChoice,
    InspectorAnswer,
    InspectorFeedback,
    FinalAnswer,
}

impl AgentMessageKind {
    /// Keys that must be present for this shape; the first one after
    /// `reason` is the discriminating key.
    fn required_keys(&self) -> [&'static str; 3] {
        match self {
            AgentMessageKind::SeekerChoice => ["reason", "summary", "choice"],
            AgentMessageKind::InspectorAnswer => ["reason", "answer", "reference"],
            AgentMessageKind::InspectorFeedback => ["reason", "information", "choice"],
            AgentMessageKind::FinalAnswer => ["reason", "answer", "reference"],
        }
    }
}

/// A validated agent reply. Index lists are positions in the request's
/// image list, deduplicated in first-seen order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentMessage {
    SeekerChoice {
        reason: String,
        summary: String,
        choice: Vec<usize>,
    },
    InspectorAnswer {
        reason: String,
        answer: String,
        reference: Vec<usize>,
    },
    InspectorFeedback {
        reason: String,
        information: String,
        choice: Vec<usize>,
    },
    FinalAnswer {
        reason: String,
        answer: String,
        reference: Vec<usize>,
    },
}

impl AgentMessage {
    pub fn kind(&self) -> AgentMessageKind {
        match self {
            AgentMessage::SeekerChoice { .. } => AgentMessageKind::SeekerChoice,
            AgentMessage::InspectorAnswer { .. } => AgentMessageKind::InspectorAnswer,
            AgentMessage::InspectorFeedback { .. } => AgentMessageKind::InspectorFeedback,
            AgentMessage::FinalAnswer { .. } => AgentMessageKind::FinalAnswer,
        }
    }

    /// The wire shape: exactly the three protocol fields, no tag.
    pub fn wire_json(&self) -> Value {
        match self {
            AgentMessage::SeekerChoice {
                reason,
                summary,
                choice,
            } => serde_json::json!({
                "reason": reason, "summary": summary, "choice": choice,
            }),
            AgentMessage::InspectorAnswer {
                reason,
                answer,
                reference,
            }
            | AgentMessage::FinalAnswer {
                reason,
                answer,
                reference,
            } => serde_json::json!({
                "reason": reason, "answer": answer, "reference": reference,
            }),
            AgentMessage::InspectorFeedback {
                reason,
                information,
                choice,
            } => serde_json::json!({
                "reason": reason, "information": information, "choice": choice,
            }),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no JSON object found in model reply")]
    ParseFailure,
    #[error("reply matches no expected message shape: {0}")]
    SchemaViolation(String),
    #[error("reply contains both `answer` and `information`")]
    AmbiguousVariant,
}

/// Extracts the first balanced JSON object in `raw` and validates it
/// against `expected` shapes. When both inspector shapes are expected the
/// reply is disambiguated by key presence (`answer` vs `information`).
pub fn parse_agent_json(
    raw: &str,
    expected: &[AgentMessageKind],
) -> Result<AgentMessage, ParseError> {
    let object = first_json_object(raw).ok_or(ParseError::ParseFailure)?;

    let wants = |kind| expected.contains(&kind);
    if wants(AgentMessageKind::InspectorAnswer)
        && wants(AgentMessageKind::InspectorFeedback)
        && object.contains_key("answer")
        && object.contains_key("information")
    {
        return Err(ParseError::AmbiguousVariant);
    }

    let kind = expected
        .iter()
        .copied()
        .find(|kind| {
            kind.required_keys()
                .iter()
                .all(|key| object.contains_key(*key))
        })
        .ok_or_else(|| {
            let keys: Vec<&str> = object.keys().map(String::as_str).collect();
            ParseError::SchemaViolation(format!("object has keys {keys:?}"))
        })?;

    let text = |key: &str| -> Result<String, ParseError> {
        match &object[key] {
            Value::String(s) => Ok(s.clone()),
            other => Err(ParseError::SchemaViolation(format!(
                "field `{key}` must be a string, got {other}"
            ))),
        }
    };
    let indices = |key: &str| -> Result<Vec<usize>, ParseError> {
        let Value::Array(items) = &object[key] else {
            return Err(ParseError::SchemaViolation(format!(
                "field `{key}` must be a list of integers"
            )));
        };
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            let idx = item.as_u64().ok_or_else(|| {
                ParseError::SchemaViolation(format!(
                    "field `{key}` must contain non-negative integers, got {item}"
                ))
            })?;
            let idx = idx as usize;
            if !out.contains(&idx) {
                out.push(idx);
            }
        }
        Ok(out)
    };

    Ok(match kind {
        AgentMessageKind::SeekerChoice => AgentMessage::SeekerChoice {
            reason: text("reason")?,
            summary: text("summary")?,
            choice: indices("choice")?,
        },
        AgentMessageKind::InspectorAnswer => AgentMessage::InspectorAnswer {
            reason: text("reason")?,
            answer: text("answer")?,
            reference: indices("reference")?,
        },
        AgentMessageKind::InspectorFeedback => AgentMessage::InspectorFeedback {
            reason: text("reason")?,
            information: text("information")?,
            choice: indices("choice")?,
        },
        AgentMessageKind::FinalAnswer => AgentMessage::FinalAnswer {
            reason: text("reason")?,
            answer: text("answer")?,
            reference: indices("reference")?,
        },
    })
}

/// First substring of `raw` that is a balanced, parseable JSON object.
/// Brace-balanced spans that fail to parse are skipped.
fn first_json_object(raw: &str) -> Option<Map<String, Value>> {
    let mut from = 0;
    while let Some(offset) = raw[from..].find('{') {
        let start = from + offset;
        if let Some(end) = balanced_end(raw.as_bytes(), start) {
            if let Ok(Value::Object(map)) = serde_json::from_str(&raw[start..=end]) {
                return Some(map);
            }
        }
        from = start + 1;
    }
    None
}

/// Byte index of the `}` closing the object opened at `start`, respecting
/// JSON string literals and escapes.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [AgentMessageKind; 4] = [
        AgentMessageKind::SeekerChoice,
        AgentMessageKind::InspectorAnswer,
        AgentMessageKind::InspectorFeedback,
        AgentMessageKind::FinalAnswer,
    ];

    #[test]
    fn parses_fenced_seeker_choice() {
        let raw = "```json\n{\"reason\":\"r\",\"summary\":\"s\",\"choice\":[0,1]}\n```";
        let msg = parse_agent_json(raw, &[AgentMessageKind::SeekerChoice]).unwrap();
        assert_eq!(
            msg,
            AgentMessage::SeekerChoice {
                reason: "r".into(),
                summary: "s".into(),
                choice: vec![0, 1],
            }
        );
    }

    #[test]
    fn disambiguates_inspector_by_key() {
        let expected = [
            AgentMessageKind::InspectorAnswer,
            AgentMessageKind::InspectorFeedback,
        ];
        let answer = r#"{"reason":"found it","answer":"42%","reference":[0]}"#;
        assert!(matches!(
            parse_agent_json(answer, &expected).unwrap(),
            AgentMessage::InspectorAnswer { .. }
        ));
        let feedback = r#"{"reason":"...","information":"More information about the Bohr Model.","choice":[]}"#;
        assert!(matches!(
            parse_agent_json(feedback, &expected).unwrap(),
            AgentMessage::InspectorFeedback { .. }
        ));
        let both = r#"{"reason":"?","answer":"a","information":"i","choice":[],"reference":[]}"#;
        assert_eq!(
            parse_agent_json(both, &expected).unwrap_err(),
            ParseError::AmbiguousVariant
        );
    }

    #[test]
    fn prose_without_json_fails() {
        assert_eq!(
            parse_agent_json("I cannot decide.", &ALL).unwrap_err(),
            ParseError::ParseFailure
        );
    }

    #[test]
    fn wrong_keys_are_schema_violation() {
        let raw = r#"{"thought":"x","pick":[1]}"#;
        assert!(matches!(
            parse_agent_json(raw, &[AgentMessageKind::SeekerChoice]).unwrap_err(),
            ParseError::SchemaViolation(_)
        ));
    }

    #[test]
    fn negative_or_fractional_indices_rejected() {
        let raw = r#"{"reason":"r","summary":"s","choice":[-1]}"#;
        assert!(matches!(
            parse_agent_json(raw, &[AgentMessageKind::SeekerChoice]).unwrap_err(),
            ParseError::SchemaViolation(_)
        ));
        let raw = r#"{"reason":"r","summary":"s","choice":[1.5]}"#;
        assert!(matches!(
            parse_agent_json(raw, &[AgentMessageKind::SeekerChoice]).unwrap_err(),
            ParseError::SchemaViolation(_)
        ));
    }

    #[test]
    fn duplicate_indices_dedup_in_order() {
        let raw = r#"{"reason":"r","summary":"s","choice":[2,0,2,0,1]}"#;
        let msg = parse_agent_json(raw, &[AgentMessageKind::SeekerChoice]).unwrap();
        assert_eq!(
            msg,
            AgentMessage::SeekerChoice {
                reason: "r".into(),
                summary: "s".into(),
                choice: vec![2, 0, 1]
            }
        );
    }

    #[test]
    fn skips_unparseable_brace_spans() {
        let raw = "think {not json} then {\"reason\":\"r\",\"answer\":\"a\",\"reference\":[0]}";
        let msg = parse_agent_json(raw, &[AgentMessageKind::FinalAnswer]).unwrap();
        assert!(matches!(msg, AgentMessage::FinalAnswer { .. }));
    }

    #[test]
    fn braces_inside_strings_do_not_confuse_extraction() {
        let raw = r#"{"reason":"uses { and } inside","summary":"s","choice":[3]}"#;
        let msg = parse_agent_json(raw, &[AgentMessageKind::SeekerChoice]).unwrap();
        assert_eq!(
            msg,
            AgentMessage::SeekerChoice {
                reason: "uses { and } inside".into(),
                summary: "s".into(),
                choice: vec![3],
            }
        );
    }

    mod round_trip {
        use super::*;
        use proptest::prelude::*;

        fn arb_indices() -> impl Strategy<Value = Vec<usize>> {
            // Parsing dedups while keeping first-seen order; sorted unique
            // input is its own fixed point.
            proptest::collection::btree_set(0usize..40, 0..6)
                .prop_map(|set| set.into_iter().collect())
        }

        fn arb_message() -> impl Strategy<Value = AgentMessage> {
            let text = ".*";
            prop_oneof![
                (text, text, arb_indices()).prop_map(|(reason, summary, choice)| {
                    AgentMessage::SeekerChoice {
                        reason,
                        summary,
                        choice,
                    }
                }),
                (text, text, arb_indices()).prop_map(|(reason, answer, reference)| {
                    AgentMessage::InspectorAnswer {
                        reason,
                        answer,
                        reference,
                    }
                }),
                (text, text, arb_indices()).prop_map(|(reason, information, choice)| {
                    AgentMessage::InspectorFeedback {
                        reason,
                        information,
                        choice,
                    }
                }),
                (text, text, arb_indices()).prop_map(|(reason, answer, reference)| {
                    AgentMessage::FinalAnswer {
                        reason,
                        answer,
                        reference,
                    }
                }),
            ]
        }

        proptest! {
            /// Any message embedded in surrounding prose parses back equal.
            #[test]
            fn wire_json_survives_prose_wrapping(
                msg in arb_message(),
                prefix in "[^{]*",
                suffix in ".*",
            ) {
                let raw = format!("{prefix}{}{suffix}", msg.wire_json());
                let parsed = parse_agent_json(&raw, &[msg.kind()]).unwrap();
                prop_assert_eq!(parsed, msg);
            }
        }
    }
}
