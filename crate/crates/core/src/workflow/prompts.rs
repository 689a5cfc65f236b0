//! Prompt builders for the three agents.
//!
//! Images are numbered by their position in the prompt, starting from zero;
//! agents exchange those positions, never page ids. Few-shot exemplars are
//! toggleable per backend profile since smaller models tend to need them.

use crate::corpus::PageId;
use crate::gateway::{CallTag, ChatRequest, Decoding, ImageDetail, Part, Role, Turn};

const SEEKER_SYSTEM: &str = r#"You are an assistant that hunts for the images most useful for answering a question. The images are numbered in order, starting from zero: 0, 1, 2, ...
First state what information you can get from each image, then choose the numbers of the images that best help answer the question. If none of the candidates is relevant, choose nothing.

Respond with a single JSON object in exactly this format:
{
    "reason": step-by-step evaluation of how each image relates to the question,
    "summary": the information related to the question, extracted from the images,
    "choice": List[int]
}"#;

const SEEKER_FEW_SHOT: &str = r#"Example question: Which venue hosted the quarterly budget review?
Example response:
{
    "reason": "Image 0 is a floor plan with no event information. Image 1 is a meeting invitation naming Conference Room B for the quarterly budget review. Image 2 shows catering options and is unrelated to the question.",
    "summary": "The budget review invitation names Conference Room B;The floor plan and catering pages carry no event details.",
    "choice": [1]
}"#;

const INSPECTOR_SYSTEM: &str = r#"You are an assistant that answers questions from document images. Review the images in detail. The images are numbered in order, starting from zero.

If the images contain enough information, answer the question directly. Respond with a single JSON object:
{
    "reason": step-by-step reasoning over the images,
    "answer": the answer to the question in a few words,
    "reference": List[int]
}

If the images are not enough to answer the question, describe the additional information you need and list the images that remain relevant. Respond with a single JSON object:
{
    "reason": step-by-step evaluation of how each image relates to the question,
    "information": a precise description of the additional information needed,
    "choice": List[int]
}"#;

const INSPECTOR_FEW_SHOT: &str = r#"Example response when the images are not enough:
{
    "reason": "Image 0 lists the product families but the revenue table is cropped before the totals row.",
    "information": "The page with the full revenue totals table.",
    "choice": [0]
}

Example response when the images answer the question:
{
    "reason": "Image 1 is the itinerary; the departure row shows gate 14 at 09:40.",
    "answer": "gate 14",
    "reference": [1]
}"#;

const ANSWER_SYSTEM: &str = r#"You are an assistant that answers questions from document images and names the images you used. The images are numbered in order, starting from zero. When a draft answer is given, verify it against the images and correct it if they disagree.

Respond with a single JSON object in exactly this format:
{
    "reason": step-by-step reasoning over the images,
    "answer": the answer to the question in a few words,
    "reference": List[int]
}"#;

fn image_parts(images: &[PageId], detail: ImageDetail) -> Vec<Part> {
    images
        .iter()
        .map(|page_id| Part::Image {
            page_id: page_id.clone(),
            detail,
        })
        .collect()
}

fn user_turn(mut lead: Vec<String>, images: &[PageId], detail: ImageDetail) -> Turn {
    lead.push("Images:".to_string());
    let mut parts: Vec<Part> = lead.into_iter().map(|text| Part::Text { text }).collect();
    parts.extend(image_parts(images, detail));
    Turn {
        role: Role::User,
        parts,
    }
}

pub(crate) fn seeker_request(
    query: &str,
    candidates: &[PageId],
    memory: Option<&str>,
    feedback: Option<&str>,
    step: u32,
    few_shot: bool,
) -> ChatRequest {
    let mut system = SEEKER_SYSTEM.to_string();
    if few_shot {
        system.push_str("\n\n");
        system.push_str(SEEKER_FEW_SHOT);
    }
    let mut lead = vec![format!("Query: {query}")];
    if let Some(memory) = memory.filter(|m| !m.is_empty()) {
        lead.push(format!("Memory: {memory}"));
    }
    if let Some(feedback) = feedback.filter(|f| !f.is_empty()) {
        lead.push(format!("Reflection: {feedback}"));
    }
    ChatRequest {
        tag: CallTag::new("seeker", step),
        system_prompt: system,
        turns: vec![user_turn(lead, candidates, ImageDetail::Thumbnail)],
        decoding: Decoding::default(),
    }
}

pub(crate) fn inspector_request(
    query: &str,
    images: &[PageId],
    plan: Option<&str>,
    step: u32,
    few_shot: bool,
) -> ChatRequest {
    let mut system = INSPECTOR_SYSTEM.to_string();
    if few_shot {
        system.push_str("\n\n");
        system.push_str(INSPECTOR_FEW_SHOT);
    }
    let mut lead = vec![format!("Query: {query}")];
    if let Some(plan) = plan.filter(|p| !p.is_empty()) {
        lead.push(format!("Plan: {plan}"));
    }
    ChatRequest {
        tag: CallTag::new("inspector", step),
        system_prompt: system,
        turns: vec![user_turn(lead, images, ImageDetail::Full)],
        decoding: Decoding::default(),
    }
}

pub(crate) fn answer_request(query: &str, draft: Option<&str>, images: &[PageId]) -> ChatRequest {
    let mut lead = vec![format!("Query: {query}")];
    if let Some(draft) = draft {
        lead.push(format!("Draft Answer: {draft}"));
    }
    ChatRequest {
        tag: CallTag::new("answer", 0),
        system_prompt: ANSWER_SYSTEM.to_string(),
        turns: vec![user_turn(lead, images, ImageDetail::Full)],
        decoding: Decoding::default(),
    }
}

/// Single-call baseline generation: the whole retrieval context and the
/// query in one request, same reply format as the answer agent.
pub fn naive_request(query: &str, images: &[PageId]) -> ChatRequest {
    ChatRequest {
        tag: CallTag::new("naive", 0),
        system_prompt: ANSWER_SYSTEM.to_string(),
        turns: vec![user_turn(
            vec![format!("Query: {query}")],
            images,
            ImageDetail::Full,
        )],
        decoding: Decoding::default(),
    }
}

/// Corrective re-prompt turns appended after an unparseable reply.
pub(crate) fn corrective_turns(raw_reply: &str, error: &str) -> [Turn; 2] {
    [
        Turn {
            role: Role::Assistant,
            parts: vec![Part::Text {
                text: raw_reply.to_string(),
            }],
        },
        Turn {
            role: Role::User,
            parts: vec![Part::Text {
                text: format!(
                    "Your previous reply could not be used: {error}. Respond again with exactly one JSON object in the required format and nothing else."
                ),
            }],
        },
    ]
}
