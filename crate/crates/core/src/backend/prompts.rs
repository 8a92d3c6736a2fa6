//! Patch and repair prompt builders. Wording lives in `templates/`.

use serde::{Deserialize, Serialize};

use crate::segment::Step;
use crate::verify::math::{render_number, MathState};
use crate::verify::JsonConstraint;

const MATH_PATCH: &str = include_str!("../../templates/math_patch.txt");
const MATH_REPAIR: &str = include_str!("../../templates/math_repair.txt");
const JSON_PATCH: &str = include_str!("../../templates/json_patch.txt");
const JSON_REPAIR: &str = include_str!("../../templates/json_repair.txt");

const NONE: &str = "(none)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchKind {
    MathBlock,
    MathRepair,
    JsonStrict,
    JsonRepair,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchPrompt {
    pub kind: PatchKind,
    pub body: String,
}

fn fill(template: &str, fields: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in fields {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

fn join_steps(steps: &[Step]) -> String {
    if steps.is_empty() {
        NONE.to_string()
    } else {
        steps
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

fn or_none(text: &str) -> &str {
    if text.trim().is_empty() {
        NONE
    } else {
        text
    }
}

struct MathFields {
    a: String,
    b: String,
    c: String,
    var: String,
    solution: String,
    intermediate: String,
}

impl MathFields {
    fn new(state: &MathState) -> Self {
        Self {
            a: render_number(&state.a()),
            b: render_number(&state.b()),
            c: render_number(&state.c()),
            var: state.var().to_string(),
            solution: render_number(&state.solution()),
            intermediate: render_number(&state.intermediate()),
        }
    }
}

/// Block patch for steps `verified_prefix.len() + 1 ..` of a math solution.
pub fn build_math_patch_prompt(
    new_prompt: &str,
    state: &MathState,
    verified_prefix: &[Step],
    first_failed: &Step,
) -> PatchPrompt {
    let m = MathFields::new(state);
    let from_step = (verified_prefix.len() + 1).to_string();
    let verified = join_steps(verified_prefix);
    let body = fill(
        MATH_PATCH,
        &[
            ("prompt", new_prompt),
            ("a", &m.a),
            ("b", &m.b),
            ("c", &m.c),
            ("var", &m.var),
            ("solution", &m.solution),
            ("intermediate", &m.intermediate),
            ("verified_steps", &verified),
            ("failed_step", &first_failed.text),
            ("from_step", &from_step),
        ],
    );
    PatchPrompt {
        kind: PatchKind::MathBlock,
        body,
    }
}

/// One repair attempt for a math answer; `verified_prefix` is kept verbatim.
pub fn build_math_repair_prompt(
    new_prompt: &str,
    state: &MathState,
    verified_prefix: &[Step],
    bad_output: &str,
    error_reason: &str,
) -> PatchPrompt {
    let m = MathFields::new(state);
    let from_step = (verified_prefix.len() + 1).to_string();
    let verified = join_steps(verified_prefix);
    let body = fill(
        MATH_REPAIR,
        &[
            ("prompt", new_prompt),
            ("a", &m.a),
            ("b", &m.b),
            ("c", &m.c),
            ("var", &m.var),
            ("solution", &m.solution),
            ("intermediate", &m.intermediate),
            ("verified_steps", &verified),
            ("bad_output", or_none(bad_output)),
            ("error", error_reason),
            ("from_step", &from_step),
        ],
    );
    PatchPrompt {
        kind: PatchKind::MathRepair,
        body,
    }
}

fn keys_fields(constraint: &JsonConstraint) -> (String, &'static str) {
    if constraint.is_empty() {
        (String::new(), "")
    } else {
        (
            format!("Required keys: {}\n", constraint.keys().join(", ")),
            " and includes all required keys",
        )
    }
}

pub fn build_json_patch_prompt(
    new_prompt: &str,
    constraint: &JsonConstraint,
    cached_json: &str,
) -> PatchPrompt {
    let (keys_clause, keys_task) = keys_fields(constraint);
    let body = fill(
        JSON_PATCH,
        &[
            ("prompt", new_prompt),
            ("keys_clause", &keys_clause),
            ("keys_task", keys_task),
            ("cached_json", or_none(cached_json)),
        ],
    );
    PatchPrompt {
        kind: PatchKind::JsonStrict,
        body,
    }
}

pub fn build_json_repair_prompt(
    new_prompt: &str,
    constraint: &JsonConstraint,
    bad_output: &str,
    error_reason: &str,
) -> PatchPrompt {
    let (keys_clause, keys_task) = keys_fields(constraint);
    let body = fill(
        JSON_REPAIR,
        &[
            ("prompt", new_prompt),
            ("keys_clause", &keys_clause),
            ("keys_task", keys_task),
            ("bad_output", or_none(bad_output)),
            ("error", error_reason),
        ],
    );
    PatchPrompt {
        kind: PatchKind::JsonRepair,
        body,
    }
}
