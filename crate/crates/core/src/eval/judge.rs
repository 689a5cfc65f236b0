//! Model-based answer grading.
//!
//! One judge call scores the candidate answer 1–5 against the reference;
//! 4 and above counts as correct. A reply without a usable integer gets one
//! corrective retry, then the query fails with `JudgeFailure`.

use crate::gateway::{CallTag, ChatRequest, Decoding, Gateway, Part, Role, Turn};
use crate::workflow::corrective_turns;

use super::EvalError;

const JUDGE_SYSTEM: &str = r#"You are a strict grader for question answering. Compare the candidate answer with the reference answer for the given question and reply with a single integer score from 1 to 5:
5 = equivalent to the reference in meaning and completeness
4 = correct, with only minor wording or formatting differences
3 = partially correct or incomplete
2 = mostly incorrect
1 = incorrect or unrelated
Reply with the integer only."#;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JudgeVerdict {
    pub score: u8,
    pub correct: bool,
}

fn judge_request(query: &str, reference: &str, answer: &str) -> ChatRequest {
    ChatRequest {
        tag: CallTag::new("judge", 0),
        system_prompt: JUDGE_SYSTEM.to_string(),
        turns: vec![Turn {
            role: Role::User,
            parts: vec![Part::Text {
                text: format!(
                    "Question: {query}\nReference answer: {reference}\nCandidate answer: {answer}"
                ),
            }],
        }],
        decoding: Decoding::default(),
    }
}

/// First integer in the reply, accepted only when it lies in 1..=5.
fn parse_score(raw: &str) -> Option<u8> {
    let digits: String = raw
        .chars()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect();
    match digits.parse::<u8>() {
        Ok(score) if (1..=5).contains(&score) => Some(score),
        _ => None,
    }
}

/// Grades one answer against the reference. `correct` means score >= 4.
pub fn judge_accuracy(
    answer: &str,
    reference: &str,
    query: &str,
    judge: &Gateway,
) -> Result<JudgeVerdict, EvalError> {
    let mut req = judge_request(query, reference, answer);
    for attempt in 0..2 {
        let resp = judge
            .chat(&req)
            .map_err(|e| EvalError::JudgeFailure(e.to_string()))?;
        match parse_score(&resp.text) {
            Some(score) => {
                return Ok(JudgeVerdict {
                    score,
                    correct: score >= 4,
                })
            }
            None if attempt == 0 => {
                req.turns.extend(corrective_turns(
                    &resp.text,
                    "the reply must be a single integer from 1 to 5",
                ));
            }
            None => {
                return Err(EvalError::JudgeFailure(format!(
                    "no usable score in reply `{}`",
                    resp.text
                )))
            }
        }
    }
    unreachable!("loop returns on every path")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ScriptedSession, ScriptedTranscript, TranscriptEntry};
    use std::sync::Arc;

    fn judge_with(replies: &[&str]) -> Gateway {
        let entries = replies
            .iter()
            .map(|r| TranscriptEntry::new("judge", 0, *r))
            .collect();
        Gateway::scripted(Arc::new(ScriptedSession::new(ScriptedTranscript::new(
            entries,
        ))))
    }

    #[test]
    fn threshold_is_four_or_above() {
        let expected = [false, false, false, true, true];
        for (score, want) in (1..=5).zip(expected) {
            let judge = judge_with(&[&score.to_string()]);
            let verdict = judge_accuracy("a", "ref", "q", &judge).unwrap();
            assert_eq!(verdict.score, score);
            assert_eq!(verdict.correct, want, "score {score}");
        }
    }

    #[test]
    fn non_integer_reply_retries_then_fails() {
        let judge = judge_with(&["excellent", "still excellent"]);
        let err = judge_accuracy("a", "ref", "q", &judge).unwrap_err();
        assert!(matches!(err, EvalError::JudgeFailure(_)));
    }

    #[test]
    fn retry_can_recover() {
        let judge = judge_with(&["excellent", "4"]);
        let verdict = judge_accuracy("a", "ref", "q", &judge).unwrap();
        assert_eq!(verdict.score, 4);
        assert!(verdict.correct);
    }

    #[test]
    fn out_of_range_score_is_unusable() {
        let judge = judge_with(&["I rate this 9 out of 10", "0"]);
        let err = judge_accuracy("a", "ref", "q", &judge).unwrap_err();
        assert!(matches!(err, EvalError::JudgeFailure(_)));
    }

    #[test]
    fn score_embedded_in_prose_parses() {
        let judge = judge_with(&["Score: 3. The answer misses the second part."]);
        let verdict = judge_accuracy("a", "ref", "q", &judge).unwrap();
        assert_eq!(verdict.score, 3);
        assert!(!verdict.correct);
    }
}
