//! Rule-based, task-aware verification.

mod expr;
pub mod json;
pub mod math;

use serde::{Deserialize, Serialize};

pub use expr::{Rational, DECIMAL_TOLERANCE};
pub use json::{final_json_check, json_answer_check, verify_json_step, JsonConstraint, JsonFailure};
pub use math::{
    deterministic_solve, final_math_check, math_answer_check, parse_math_prompt, verify_steps, MathState,
    MathVerdict, MathViolation, NotMath,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum StepStatus {
    Pass,
    Fail,
}

/// Result of a check, carrying a machine-readable reason on failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "UPPERCASE")]
pub enum CheckOutcome {
    Pass,
    Fail(String),
}

impl CheckOutcome {
    pub fn fail(reason: impl Into<String>) -> Self {
        CheckOutcome::Fail(reason.into())
    }

    pub fn passed(&self) -> bool {
        matches!(self, CheckOutcome::Pass)
    }

    pub fn reason(&self) -> Option<&str> {
        match self {
            CheckOutcome::Pass => None,
            CheckOutcome::Fail(r) => Some(r),
        }
    }
}
