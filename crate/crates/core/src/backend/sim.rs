//! Deterministic simulated backend.
//!
//! Responses are a pure function of the prompt, the call type, the seed and
//! the fault configuration. The simulator understands four prompt families:
//! the patch/repair templates from [`super::prompts`], linear-equation
//! problems, "JSON object with keys: ..." requests, and anything else (which
//! gets a fixed generic reply). Faults fire when a seeded hash of the call
//! falls below the configured rate.

use std::collections::HashMap;
use std::sync::LazyLock;
use std::time::Duration;

use async_trait::async_trait;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{estimate_tokens, Backend, BackendError, CallType, Completion, CompletionRequest, Usage};
use crate::segment::find_json_payload;
use crate::store::fnv1a;
use crate::verify::math::{parse_math_prompt, render_number, render_term, MathState};

static KEY_LIST: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\bkeys?\s*:\s*([A-Za-z_][A-Za-z0-9_]*(?:\s*,\s*[A-Za-z_][A-Za-z0-9_]*)*)")
        .expect("valid regex")
});
static FROM_STEP: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"from step (\d+)").expect("valid regex"));

const MATH_HINT_MARKER: &str = "expected_solution=";
const JSON_ONLY_MARKER: &str = "Return valid JSON only";

/// When a fault fires: with probability `rate`, on the listed call types
/// (all call types when `call_types` is `None`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FaultRule {
    pub rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call_types: Option<Vec<CallType>>,
}

impl FaultRule {
    pub fn always() -> Self {
        Self::at_rate(1.0)
    }

    pub fn at_rate(rate: f64) -> Self {
        Self {
            rate,
            call_types: None,
        }
    }

    pub fn on(mut self, call_types: impl IntoIterator<Item = CallType>) -> Self {
        self.call_types = Some(call_types.into_iter().collect());
        self
    }

    fn applies_to(&self, call_type: CallType) -> bool {
        self.rate > 0.0
            && self
                .call_types
                .as_ref()
                .is_none_or(|types| types.contains(&call_type))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultConfig {
    /// Final assignment becomes `v = v* + 1`.
    pub wrong_constant: FaultRule,
    /// The JSON payload loses its closing brace.
    pub invalid_json: FaultRule,
    /// The last required key is omitted.
    pub missing_key: FaultRule,
    /// The call fails as if the endpoint were unreachable.
    pub unavailable: FaultRule,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub faults: FaultConfig,
    /// Fixed delay added to every call.
    pub latency: Duration,
    /// Exact-prompt overrides, returned verbatim and never faulted.
    pub script: HashMap<String, String>,
}

impl SimConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fault {
    WrongConstant,
    InvalidJson,
    MissingKey,
    Unavailable,
}

impl Fault {
    fn tag(&self) -> &'static str {
        match self {
            Fault::WrongConstant => "wrong_constant",
            Fault::InvalidJson => "invalid_json",
            Fault::MissingKey => "missing_key",
            Fault::Unavailable => "unavailable",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SimBackend {
    config: SimConfig,
}

impl SimBackend {
    pub fn new(config: SimConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    fn rule(&self, fault: Fault) -> &FaultRule {
        let f = &self.config.faults;
        match fault {
            Fault::WrongConstant => &f.wrong_constant,
            Fault::InvalidJson => &f.invalid_json,
            Fault::MissingKey => &f.missing_key,
            Fault::Unavailable => &f.unavailable,
        }
    }

    fn fires(&self, fault: Fault, request: &CompletionRequest) -> bool {
        let rule = self.rule(fault);
        if !rule.applies_to(request.call_type) {
            return false;
        }
        let key = format!(
            "{}\u{1f}{}\u{1f}{}\u{1f}{}",
            self.config.seed,
            fault.tag(),
            request.call_type,
            request.prompt
        );
        let draw = fnv1a(key.as_bytes()) as f64 / 2f64.powi(64);
        draw < rule.rate
    }

    /// The response text for `request`, or the injected failure.
    pub fn respond(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        if let Some(text) = self.config.script.get(&request.prompt) {
            return Ok(text.clone());
        }
        if self.fires(Fault::Unavailable, request) {
            return Err(BackendError::Unavailable("simulated outage".into()));
        }
        let prompt = &request.prompt;
        let wrong = || self.fires(Fault::WrongConstant, request);
        let json_faults = || JsonFaults {
            invalid: self.fires(Fault::InvalidJson, request),
            missing_key: self.fires(Fault::MissingKey, request),
        };

        if prompt.contains(MATH_HINT_MARKER) {
            if let Some(text) = math_patch_response(prompt, wrong()) {
                return Ok(text);
            }
        }
        if prompt.contains(JSON_ONLY_MARKER) {
            return Ok(json_patch_response(prompt, json_faults()));
        }
        if let Ok(state) = parse_math_prompt(prompt) {
            return Ok(solution_steps(&state, 1, wrong()).join("\n\n"));
        }
        if let Some(keys) = requested_keys(prompt) {
            let object = build_object(&keys, None, json_faults().missing_key);
            let body = render_object(&object, json_faults().invalid);
            return Ok(format!("Here is the JSON:\n```json\n{body}\n```"));
        }
        Ok("I can help with that. Here is a short answer.".into())
    }
}

#[async_trait]
impl Backend for SimBackend {
    async fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        if !self.config.latency.is_zero() {
            tokio::time::sleep(self.config.latency).await;
        }
        let text = self.respond(request)?;
        let usage = Usage {
            prompt_tokens: estimate_tokens(&request.prompt),
            completion_tokens: estimate_tokens(&text),
        };
        Ok(Completion {
            text,
            usage: Some(usage),
        })
    }
}

/// The canonical three-step solution, starting at 1-based step `from`.
fn solution_steps(state: &MathState, from: usize, wrong_constant: bool) -> Vec<String> {
    let mut solution = state.solution();
    if wrong_constant {
        solution += 1;
    }
    let all = [
        state.to_string(),
        format!(
            "{} = {}",
            render_term(&state.a(), state.var()),
            render_number(&state.intermediate())
        ),
        format!("{} = {}", state.var(), render_number(&solution)),
    ];
    let start = from.clamp(1, all.len()) - 1;
    all[start..].to_vec()
}

fn line_after<'a>(prompt: &'a str, label: &str) -> Option<&'a str> {
    prompt
        .lines()
        .find_map(|line| line.strip_prefix(label))
        .map(str::trim)
}

fn math_patch_response(prompt: &str, wrong_constant: bool) -> Option<String> {
    let state = parse_math_prompt(line_after(prompt, "New problem:")?).ok()?;
    let from = FROM_STEP
        .captures(prompt)
        .and_then(|c| c[1].parse().ok())
        .unwrap_or(1);
    Some(solution_steps(&state, from, wrong_constant).join("\n\n"))
}

#[derive(Debug, Clone, Copy)]
struct JsonFaults {
    invalid: bool,
    missing_key: bool,
}

fn requested_keys(text: &str) -> Option<Vec<String>> {
    KEY_LIST.captures(text).map(|c| {
        c[1].split(',')
            .map(|k| k.trim().to_string())
            .filter(|k| !k.is_empty())
            .collect()
    })
}

fn value_for(key: &str) -> Value {
    Value::String(format!("{key} value"))
}

/// Required keys in order; entries from `base` are kept and extended.
fn build_object(keys: &[String], base: Option<&Map<String, Value>>, drop_last: bool) -> Map<String, Value> {
    let mut object = base.cloned().unwrap_or_default();
    for key in keys {
        object
            .entry(key.clone())
            .or_insert_with(|| value_for(key));
    }
    if drop_last {
        if let Some(last) = keys.last() {
            object.remove(last);
        }
    }
    object
}

fn render_object(object: &Map<String, Value>, invalid: bool) -> String {
    let text = serde_json::to_string(object).expect("object serializes");
    if invalid {
        text.strip_suffix('}').unwrap_or(&text).to_string()
    } else {
        text
    }
}

/// The first JSON object found in the section that follows `label`.
fn object_after(prompt: &str, label: &str) -> Option<Map<String, Value>> {
    let section = &prompt[prompt.find(label)? + label.len()..];
    let payload = find_json_payload(section)?;
    match serde_json::from_str(&payload).ok()? {
        Value::Object(map) => Some(map),
        _ => None,
    }
}

fn json_patch_response(prompt: &str, faults: JsonFaults) -> String {
    let keys = line_after(prompt, "Required keys:")
        .map(|list| {
            list.split(',')
                .map(|k| k.trim().to_string())
                .filter(|k| !k.is_empty())
                .collect()
        })
        .or_else(|| line_after(prompt, "New request:").and_then(requested_keys))
        .unwrap_or_default();
    let base = object_after(prompt, "Cached JSON")
        .or_else(|| object_after(prompt, "Previous output:"));
    let object = build_object(&keys, base.as_ref(), faults.missing_key);
    render_object(&object, faults.invalid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::prompts::{build_json_patch_prompt, build_math_patch_prompt};
    use crate::segment::Step;
    use crate::verify::math::{final_math_check, math_answer_check};
    use crate::verify::{final_json_check, JsonConstraint};

    fn request(prompt: &str, call_type: CallType) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.into(),
            call_type,
        }
    }

    fn sim(faults: FaultConfig) -> SimBackend {
        SimBackend::new(SimConfig {
            seed: 7,
            faults,
            ..SimConfig::default()
        })
    }

    #[test]
    fn scripted_prompt_is_returned_verbatim() {
        let mut config = SimConfig::with_seed(1);
        config
            .script
            .insert("Solve 2x + 3 = 13 for x".into(), "2x = 10\n\nx = 5".into());
        let backend = SimBackend::new(config);
        let out = backend
            .respond(&request("Solve 2x + 3 = 13 for x", CallType::BaselineGeneration))
            .unwrap();
        assert_eq!(out, "2x = 10\n\nx = 5");
    }

    #[test]
    fn math_baseline_is_consistent() {
        let out = sim(FaultConfig::default())
            .respond(&request("Solve 3y - 4 = 11 for y.", CallType::BaselineGeneration))
            .unwrap();
        assert_eq!(out, "3y - 4 = 11\n\n3y = 15\n\ny = 5");
        let state = MathState::from_integers(3, -4, 11, 'y').unwrap();
        assert!(final_math_check(&out, &state).passed());
    }

    #[test]
    fn wrong_constant_fault_shifts_final_assignment() {
        let faults = FaultConfig {
            wrong_constant: FaultRule::always(),
            ..FaultConfig::default()
        };
        let out = sim(faults)
            .respond(&request("Solve 2x + 3 = 13 for x", CallType::BaselineGeneration))
            .unwrap();
        assert!(out.ends_with("x = 6"), "{out}");
        let state = MathState::from_integers(2, 3, 13, 'x').unwrap();
        assert!(!math_answer_check(&out, &state).passed());
    }

    #[test]
    fn faults_respect_call_type_filter() {
        let faults = FaultConfig {
            wrong_constant: FaultRule::always().on([CallType::Patch]),
            ..FaultConfig::default()
        };
        let backend = sim(faults);
        let prompt = "Solve 2x + 3 = 13 for x";
        let base = backend.respond(&request(prompt, CallType::BaselineGeneration)).unwrap();
        assert!(base.ends_with("x = 5"));
        let state = MathState::from_integers(2, 3, 13, 'x').unwrap();
        let patch = build_math_patch_prompt(
            prompt,
            &state,
            &[Step::generic(1, "2x + 3 = 13")],
            &Step::generic(2, "2x = 11"),
        );
        let out = backend.respond(&request(&patch.body, CallType::Patch)).unwrap();
        assert_eq!(out, "2x = 10\n\nx = 6");
    }

    #[test]
    fn math_patch_regenerates_requested_suffix() {
        let state = MathState::from_integers(2, 3, 13, 'x').unwrap();
        let patch = build_math_patch_prompt(
            "Solve 2x + 3 = 13 for x",
            &state,
            &[Step::generic(1, "2x + 3 = 13"), Step::generic(2, "2x = 10")],
            &Step::generic(3, "x = 4"),
        );
        let out = sim(FaultConfig::default())
            .respond(&request(&patch.body, CallType::Patch))
            .unwrap();
        assert_eq!(out, "x = 5");
    }

    #[test]
    fn json_baseline_is_fenced_object_with_requested_keys() {
        let out = sim(FaultConfig::default())
            .respond(&request(
                "Return a JSON object with the keys: alpha, beta.",
                CallType::BaselineGeneration,
            ))
            .unwrap();
        assert!(out.contains("```json"));
        let constraint = JsonConstraint::new(["alpha", "beta"]);
        let payload = find_json_payload(&out).unwrap();
        assert!(final_json_check(&payload, &constraint).passed());
    }

    #[test]
    fn json_patch_extends_cached_object() {
        let constraint = JsonConstraint::new(["a", "b", "c", "d"]);
        let prompt = build_json_patch_prompt(
            "Return a JSON object with keys: a, b, c, d",
            &constraint,
            r#"{"a":1,"b":2,"c":3}"#,
        );
        let out = sim(FaultConfig::default())
            .respond(&request(&prompt.body, CallType::Patch))
            .unwrap();
        let value: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(value["a"], 1);
        assert_eq!(value["d"], "d value");
    }

    #[test]
    fn json_faults_corrupt_output() {
        let constraint = JsonConstraint::new(["a", "d"]);
        let prompt = build_json_patch_prompt("keys: a, d", &constraint, r#"{"a":1}"#);
        let missing = sim(FaultConfig {
            missing_key: FaultRule::always(),
            ..FaultConfig::default()
        })
        .respond(&request(&prompt.body, CallType::Patch))
        .unwrap();
        assert_eq!(missing, r#"{"a":1}"#);
        let invalid = sim(FaultConfig {
            invalid_json: FaultRule::always(),
            ..FaultConfig::default()
        })
        .respond(&request(&prompt.body, CallType::Patch))
        .unwrap();
        assert!(serde_json::from_str::<Value>(&invalid).is_err());
    }

    #[test]
    fn fault_rate_is_roughly_honoured_and_deterministic() {
        let faults = FaultConfig {
            wrong_constant: FaultRule::at_rate(0.3),
            ..FaultConfig::default()
        };
        let backend = sim(faults.clone());
        let again = sim(faults);
        let mut fired = 0;
        for c in 0..1000 {
            let r = request(&format!("Solve 2x + 3 = {c} for x"), CallType::BaselineGeneration);
            let out = backend.respond(&r).unwrap();
            assert_eq!(out, again.respond(&r).unwrap());
            let state = parse_math_prompt(&r.prompt).unwrap();
            if !math_answer_check(&out, &state).passed() {
                fired += 1;
            }
        }
        assert!((200..400).contains(&fired), "fired {fired}");
    }

    #[tokio::test]
    async fn unavailable_fault_errors_and_usage_is_estimated() {
        let down = sim(FaultConfig {
            unavailable: FaultRule::always(),
            ..FaultConfig::default()
        });
        let err = down
            .complete(&request("hello", CallType::BaselineGeneration))
            .await
            .unwrap_err();
        assert!(err.is_retryable());

        let ok = sim(FaultConfig::default())
            .complete(&request("hello there", CallType::BaselineGeneration))
            .await
            .unwrap();
        let usage = ok.usage.unwrap();
        assert_eq!(usage.prompt_tokens, 3);
        assert_eq!(usage.completion_tokens, estimate_tokens(&ok.text));
    }
}
