//! JSON payload validation against required top-level keys.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CheckOutcome;
use crate::segment::{find_json_payload, Step};

/// Ordered set of top-level keys a JSON payload must contain.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JsonConstraint {
    required_keys: Vec<String>,
}

impl JsonConstraint {
    /// Builds a constraint, dropping empty and duplicate keys while keeping
    /// first-seen order.
    pub fn new<I, S>(keys: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut required_keys: Vec<String> = Vec::new();
        for key in keys {
            let key = key.into();
            if !key.is_empty() && !required_keys.contains(&key) {
                required_keys.push(key);
            }
        }
        Self { required_keys }
    }

    pub fn keys(&self) -> &[String] {
        &self.required_keys
    }

    pub fn is_empty(&self) -> bool {
        self.required_keys.is_empty()
    }
}

/// Why a JSON payload was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JsonFailure {
    ParseError(String),
    MissingKeys(Vec<String>),
}

impl fmt::Display for JsonFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JsonFailure::ParseError(detail) => write!(f, "parse_error: {detail}"),
            JsonFailure::MissingKeys(keys) => write!(f, "missing_keys: [{}]", keys.join(", ")),
        }
    }
}

impl From<JsonFailure> for CheckOutcome {
    fn from(failure: JsonFailure) -> Self {
        CheckOutcome::fail(failure.to_string())
    }
}

/// Validates raw payload text: it must be a JSON object (or array) holding
/// every required key at top level. Arrays have no keys.
pub fn validate_payload(text: &str, constraint: &JsonConstraint) -> Result<Value, JsonFailure> {
    let value: Value =
        serde_json::from_str(text.trim()).map_err(|e| JsonFailure::ParseError(e.to_string()))?;
    let missing: Vec<String> = match &value {
        Value::Object(map) => constraint
            .keys()
            .iter()
            .filter(|k| !map.contains_key(k.as_str()))
            .cloned()
            .collect(),
        Value::Array(_) => constraint.keys().to_vec(),
        _ => {
            return Err(JsonFailure::ParseError(
                "payload is not a JSON object or array".into(),
            ))
        }
    };
    if missing.is_empty() {
        Ok(value)
    } else {
        Err(JsonFailure::MissingKeys(missing))
    }
}

pub fn verify_json_step(step: &Step, constraint: &JsonConstraint) -> CheckOutcome {
    match validate_payload(&step.text, constraint) {
        Ok(_) => CheckOutcome::Pass,
        Err(failure) => failure.into(),
    }
}

/// Extracts the payload from a stitched answer and validates it.
pub fn check_answer(answer: &str, constraint: &JsonConstraint) -> Result<Value, JsonFailure> {
    let payload = find_json_payload(answer)
        .ok_or_else(|| JsonFailure::ParseError("no JSON object or array found".into()))?;
    validate_payload(&payload, constraint)
}

pub fn final_json_check(answer: &str, constraint: &JsonConstraint) -> CheckOutcome {
    match check_answer(answer, constraint) {
        Ok(_) => CheckOutcome::Pass,
        Err(failure) => failure.into(),
    }
}

/// Answer-level quality: the payload is an object and every required key maps
/// to a non-null value.
pub fn json_answer_check(answer: &str, constraint: &JsonConstraint) -> CheckOutcome {
    let payload = match find_json_payload(answer) {
        Some(p) => p,
        None => return CheckOutcome::fail("no_json"),
    };
    let Ok(Value::Object(map)) = serde_json::from_str::<Value>(&payload) else {
        return CheckOutcome::fail("not_an_object");
    };
    let absent: Vec<&str> = constraint
        .keys()
        .iter()
        .filter(|k| map.get(k.as_str()).is_none_or(Value::is_null))
        .map(String::as_str)
        .collect();
    if absent.is_empty() {
        CheckOutcome::Pass
    } else {
        CheckOutcome::fail(format!("absent_values: [{}]", absent.join(", ")))
    }
}
