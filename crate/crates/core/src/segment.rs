//! Response segmentation.
//!
//! A response is cached as an ordered list of [`Step`]s. Free-form answers are
//! split heuristically on paragraph boundaries, `Step N` markers and
//! line-leading list bullets. Structured (JSON) answers are reduced to a single
//! payload step holding the first valid JSON object or array in the text.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Delimiter used when stitching generic steps back into one response.
pub const STITCH_DELIMITER: &str = "\n\n";

static BLANK_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\n[^\S\n]*\n").unwrap());
static STEP_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bstep\s+\d+\s*[:.]?").unwrap());
static LIST_BULLET: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^[^\S\n]*(?:[-*]|\d+\.)[^\S\n]").unwrap());

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SegmentError {
    #[error("response is empty")]
    EmptyResponse,
    #[error("no JSON object or array found in response")]
    NoJsonFound,
    #[error("step list is empty")]
    EmptyStepList,
    #[error("step list is malformed: {0}")]
    InvalidSteps(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Generic,
    JsonPayload,
}

/// One unit of a segmented response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    /// 1-based position within its step list.
    pub index: usize,
    pub text: String,
    pub kind: StepKind,
}

impl Step {
    pub fn generic(index: usize, text: impl Into<String>) -> Self {
        Self {
            index,
            text: text.into(),
            kind: StepKind::Generic,
        }
    }

    pub fn json(text: impl Into<String>) -> Self {
        Self {
            index: 1,
            text: text.into(),
            kind: StepKind::JsonPayload,
        }
    }
}

/// Builds a generic step list from texts, numbering from 1.
pub fn steps_from_texts<I, S>(texts: I) -> Vec<Step>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    texts
        .into_iter()
        .enumerate()
        .map(|(i, t)| Step::generic(i + 1, t))
        .collect()
}

/// Checks the step-list invariants: contiguous 1-based indices, non-empty
/// texts, and a JSON payload step only ever appearing alone.
pub fn validate_steps(steps: &[Step]) -> Result<(), SegmentError> {
    if steps.is_empty() {
        return Err(SegmentError::EmptyStepList);
    }
    for (pos, step) in steps.iter().enumerate() {
        if step.index != pos + 1 {
            return Err(SegmentError::InvalidSteps(format!(
                "step at position {} has index {}",
                pos + 1,
                step.index
            )));
        }
        if step.text.trim().is_empty() {
            return Err(SegmentError::InvalidSteps(format!(
                "step {} is empty",
                step.index
            )));
        }
        if step.kind == StepKind::JsonPayload && steps.len() != 1 {
            return Err(SegmentError::InvalidSteps(
                "a JSON payload step must be the only step".into(),
            ));
        }
    }
    Ok(())
}

/// Splits `text` before every match of `re`, keeping the matched marker at the
/// start of the following piece.
fn split_before<'a>(text: &'a str, re: &Regex) -> Vec<&'a str> {
    let mut pieces = Vec::new();
    let mut start = 0;
    for m in re.find_iter(text) {
        if m.start() > start {
            pieces.push(&text[start..m.start()]);
        }
        start = m.start();
    }
    pieces.push(&text[start..]);
    pieces
}

/// Splits a free-form response into ordered steps.
pub fn segment_generic(response: &str) -> Result<Vec<Step>, SegmentError> {
    let normalized = response.replace("\r\n", "\n");
    if normalized.trim().is_empty() {
        return Err(SegmentError::EmptyResponse);
    }

    let mut texts = Vec::new();
    for paragraph in BLANK_LINE.split(&normalized) {
        for by_marker in split_before(paragraph, &STEP_MARKER) {
            for by_bullet in split_before(by_marker, &LIST_BULLET) {
                let piece = by_bullet.trim();
                if !piece.is_empty() {
                    texts.push(piece.to_string());
                }
            }
        }
    }
    Ok(steps_from_texts(texts))
}

/// Removes Markdown code-fence lines, keeping the fenced contents.
pub fn strip_code_fences(text: &str) -> String {
    text.lines()
        .filter(|line| !line.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Finds the first syntactically valid JSON object or array in `text`, after
/// code fences are removed, and returns it verbatim.
pub fn find_json_payload(text: &str) -> Option<String> {
    let cleaned = strip_code_fences(text);
    for (offset, ch) in cleaned.char_indices() {
        if ch != '{' && ch != '[' {
            continue;
        }
        let tail = &cleaned[offset..];
        let mut stream = serde_json::Deserializer::from_str(tail).into_iter::<serde_json::Value>();
        if let Some(Ok(value)) = stream.next() {
            if value.is_object() || value.is_array() {
                return Some(tail[..stream.byte_offset()].to_string());
            }
        }
    }
    None
}

/// Extracts the single JSON payload step of a structured-output response.
pub fn extract_json_step(response: &str) -> Result<Step, SegmentError> {
    if response.trim().is_empty() {
        return Err(SegmentError::EmptyResponse);
    }
    find_json_payload(response)
        .map(Step::json)
        .ok_or(SegmentError::NoJsonFound)
}

/// Joins a step list into the final response text.
pub fn stitch(steps: &[Step]) -> Result<String, SegmentError> {
    validate_steps(steps)?;
    if let [only] = steps {
        if only.kind == StepKind::JsonPayload {
            return Ok(only.text.clone());
        }
    }
    Ok(steps
        .iter()
        .map(|s| s.text.as_str())
        .collect::<Vec<_>>()
        .join(STITCH_DELIMITER))
}
