//! Seeded perturbation suite.
//!
//! Each task gets `n` base prompts. Every base prompt yields `k` variants for
//! each of its perturbation kinds: three paraphrase tiers for both tasks, plus
//! `value_change` (math) or `keys_change` (json). Paraphrases are drawn with
//! replacement from fixed template pools, so exact duplicates occur and are
//! pruned.

use std::collections::HashSet;
use std::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use stepcache::store::{Constraints, TaskType};
use stepcache::verify::JsonConstraint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    Base,
    Low,
    Med,
    High,
    ValueChange,
    KeysChange,
}

impl Perturbation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Perturbation::Base => "base",
            Perturbation::Low => "low",
            Perturbation::Med => "med",
            Perturbation::High => "high",
            Perturbation::ValueChange => "value_change",
            Perturbation::KeysChange => "keys_change",
        }
    }

    /// Evaluation kinds for `task`, in evaluation order.
    pub fn kinds_for(task: TaskType) -> &'static [Perturbation] {
        match task {
            TaskType::Math => &[
                Perturbation::Low,
                Perturbation::Med,
                Perturbation::High,
                Perturbation::ValueChange,
            ],
            TaskType::Json => &[
                Perturbation::Low,
                Perturbation::Med,
                Perturbation::High,
                Perturbation::KeysChange,
            ],
            TaskType::Other => &[],
        }
    }
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCase {
    pub id: String,
    pub base_id: usize,
    pub prompt: String,
    pub task: TaskType,
    pub perturbation: Perturbation,
    pub constraints: Constraints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    pub n_base: usize,
    pub k: usize,
    pub seed: u64,
    /// Base prompts used to seed the cache: `n` math then `n` json.
    pub warmup: Vec<BenchCase>,
    /// Evaluation cases: all paraphrases first, then value/key changes.
    pub cases: Vec<BenchCase>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SuiteError {
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("n and k must both be at least 1")]
    EmptySuite,
}

const VARIABLES: [char; 4] = ['x', 'y', 'z', 't'];

const MATH_LOW: [&str; 8] = [
    "Please solve {eq} for {v}.",
    "Solve {eq} for {v}, please.",
    "Solve {eq} for {v}!",
    "Can you solve {eq} for {v}?",
    "Solve: {eq}, for {v}.",
    "solve {eq} for {v}",
    "Kindly solve {eq} for {v}.",
    "Solve {eq} for {v}, thanks.",
];

const MATH_MED: [&str; 8] = [
    "For {v}, solve {eq}.",
    "Given {eq}, solve for {v}.",
    "Find {v} given that {eq}.",
    "{eq}; solve it for {v}.",
    "With {eq}, what is {v}?",
    "Determine {v} from the equation {eq}.",
    "Using {eq}, find the value of {v}.",
    "Here is an equation: {eq}. Solve for {v}.",
];

const MATH_HIGH: [&str; 8] = [
    "Work out the unknown {v} satisfying {eq}.",
    "Compute the value of {v} that makes {eq} true.",
    "What value of {v} satisfies {eq}?",
    "Figure out {v} when {eq} holds.",
    "Determine the unknown {v} for which {eq} is valid.",
    "Evaluate {v} such that {eq} is satisfied.",
    "Isolate {v} in the linear relation {eq}.",
    "Identify the number {v} obeying {eq}.",
];

const JSON_LOW: [&str; 8] = [
    "Please return a JSON object with the keys: {keys}.",
    "Return a JSON object with the keys: {keys}!",
    "Return a JSON object with the keys: {keys}, please.",
    "Can you return a JSON object with the keys: {keys}?",
    "return a json object with the keys: {keys}",
    "Kindly return a JSON object with the keys: {keys}.",
    "Return one JSON object with the keys: {keys}.",
    "Return a JSON object with the keys: {keys}, thanks.",
];

const JSON_MED: [&str; 8] = [
    "With the keys: {keys}, return a JSON object.",
    "Using the keys: {keys}, produce a JSON object.",
    "For the keys: {keys}, give back a JSON object.",
    "Given the keys: {keys}, return them as a JSON object.",
    "JSON object please, containing the keys: {keys}.",
    "The keys: {keys}. Return a JSON object with them.",
    "Output a JSON object; include the keys: {keys}.",
    "Return, as a JSON object, the keys: {keys}.",
];

const JSON_HIGH: [&str; 8] = [
    "Emit a structured record holding the keys: {keys}.",
    "Produce machine-readable output whose fields are the keys: {keys}.",
    "Generate a dictionary-style payload using the keys: {keys}.",
    "Serialize a record that exposes the keys: {keys}.",
    "Build a key-value document containing the keys: {keys}.",
    "Craft an object literal featuring the keys: {keys}.",
    "Compose structured data with top-level keys: {keys}.",
    "Write out a mapping that carries the keys: {keys}.",
];

const KEY_POOL: [&str; 64] = [
    "name", "age", "city", "country", "email", "phone", "status", "score", "title", "author",
    "year", "genre", "price", "currency", "quantity", "category", "color", "size", "weight",
    "height", "rating", "comment", "owner", "created", "updated", "version", "language", "region",
    "latitude", "longitude", "timezone", "priority", "deadline", "budget", "team", "manager",
    "salary", "department", "skills", "hobby", "pet", "vehicle", "model", "brand", "capacity",
    "duration", "distance", "speed", "temperature", "humidity", "pressure", "altitude", "source",
    "target", "label", "summary", "notes", "tags", "count", "total", "average", "minimum",
    "maximum", "unit",
];

const KEYS_PER_BASE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct MathBase {
    a: i64,
    b: i64,
    solution: i64,
    var: char,
}

impl MathBase {
    fn c(&self) -> i64 {
        self.a * self.solution + self.b
    }

    fn equation_with(&self, c: i64) -> String {
        format!("{}{} + {} = {}", self.a, self.var, self.b, c)
    }

    fn equation(&self) -> String {
        self.equation_with(self.c())
    }

    fn prompt_with(&self, c: i64) -> String {
        format!("Solve {} for {}.", self.equation_with(c), self.var)
    }

    fn prompt(&self) -> String {
        self.prompt_with(self.c())
    }
}

fn json_prompt(keys: &[String]) -> String {
    format!("Return a JSON object with the keys: {}.", keys.join(", "))
}

fn pool(task: TaskType, kind: Perturbation) -> &'static [&'static str] {
    match (task, kind) {
        (TaskType::Math, Perturbation::Low) => &MATH_LOW,
        (TaskType::Math, Perturbation::Med) => &MATH_MED,
        (TaskType::Math, Perturbation::High) => &MATH_HIGH,
        (TaskType::Json, Perturbation::Low) => &JSON_LOW,
        (TaskType::Json, Perturbation::Med) => &JSON_MED,
        (TaskType::Json, Perturbation::High) => &JSON_HIGH,
        _ => &[],
    }
}

fn math_bases(rng: &mut ChaCha8Rng, n: usize) -> Vec<MathBase> {
    let mut seen = HashSet::new();
    let mut bases = Vec::with_capacity(n);
    while bases.len() < n {
        let base = MathBase {
            a: rng.random_range(1..=9),
            b: rng.random_range(0..=20),
            solution: rng.random_range(-10..=15),
            var: *VARIABLES.choose(rng).expect("non-empty"),
        };
        if seen.insert((base.a, base.b, base.c(), base.var)) {
            bases.push(base);
        }
    }
    bases
}

/// Key sets are disjoint while the pool lasts, then merely distinct.
fn json_bases(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<String>> {
    let mut shuffled: Vec<&str> = KEY_POOL.to_vec();
    shuffled.shuffle(rng);
    let mut fresh = shuffled.into_iter();
    let mut seen: HashSet<Vec<String>> = HashSet::new();
    let mut bases = Vec::with_capacity(n);
    while bases.len() < n {
        let mut keys: Vec<String> = fresh.by_ref().take(KEYS_PER_BASE).map(String::from).collect();
        if keys.len() < KEYS_PER_BASE {
            keys = KEY_POOL
                .choose_multiple(rng, KEYS_PER_BASE)
                .map(|k| k.to_string())
                .collect();
        }
        if seen.insert(keys.clone()) {
            bases.push(keys);
        }
    }
    bases
}

/// `count` distinct non-zero shifts of the solution, nearest first on average.
fn solution_shifts(rng: &mut ChaCha8Rng, count: usize) -> Vec<i64> {
    let mut candidates: Vec<i64> = (1..=(count as i64).max(5)).flat_map(|d| [d, -d]).collect();
    candidates.shuffle(rng);
    candidates.truncate(count);
    candidates
}

/// Builds the evaluation suite and warmup list for `(n_base, k, seed)`.
pub fn generate_suite(n_base: usize, k: usize, seed: u64, include_code: bool) -> Result<Suite, SuiteError> {
    if include_code {
        return Err(SuiteError::Unsupported("code tasks are not part of this benchmark".into()));
    }
    if n_base == 0 || k == 0 {
        return Err(SuiteError::EmptySuite);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let maths = math_bases(&mut rng, n_base);
    let jsons = json_bases(&mut rng, n_base);

    let mut warmup = Vec::with_capacity(2 * n_base);
    for (i, base) in maths.iter().enumerate() {
        warmup.push(BenchCase {
            id: format!("warmup-math-b{i:02}"),
            base_id: i,
            prompt: base.prompt(),
            task: TaskType::Math,
            perturbation: Perturbation::Base,
            constraints: Constraints::math(),
        });
    }
    for (i, keys) in jsons.iter().enumerate() {
        warmup.push(BenchCase {
            id: format!("warmup-json-b{i:02}"),
            base_id: i,
            prompt: json_prompt(keys),
            task: TaskType::Json,
            perturbation: Perturbation::Base,
            constraints: Constraints::json(JsonConstraint::new(keys.iter().cloned())),
        });
    }

    let mut seen: HashSet<String> = warmup.iter().map(|w| w.prompt.clone()).collect();
    let mut cases = Vec::new();
    let mut push = |case: BenchCase| {
        if seen.insert(case.prompt.clone()) {
            cases.push(case);
        }
    };

    for task in [TaskType::Math, TaskType::Json] {
        for kind in [Perturbation::Low, Perturbation::Med, Perturbation::High] {
            let templates = pool(task, kind);
            for i in 0..n_base {
                for j in 0..k {
                    let template = templates.choose(&mut rng).expect("non-empty pool");
                    let (prompt, constraints) = match task {
                        TaskType::Math => (
                            template
                                .replace("{eq}", &maths[i].equation())
                                .replace("{v}", &maths[i].var.to_string()),
                            Constraints::math(),
                        ),
                        _ => (
                            template.replace("{keys}", &jsons[i].join(", ")),
                            Constraints::json(JsonConstraint::new(jsons[i].iter().cloned())),
                        ),
                    };
                    push(BenchCase {
                        id: format!("{task}-{kind}-b{i:02}-v{j}"),
                        base_id: i,
                        prompt,
                        task,
                        perturbation: kind,
                        constraints,
                    });
                }
            }
        }
    }

    for (i, base) in maths.iter().enumerate() {
        for (j, shift) in solution_shifts(&mut rng, k).into_iter().enumerate() {
            push(BenchCase {
                id: format!("math-value_change-b{i:02}-v{j}"),
                base_id: i,
                prompt: base.prompt_with(base.c() + base.a * shift),
                task: TaskType::Math,
                perturbation: Perturbation::ValueChange,
                constraints: Constraints::math().with_force_skip(true),
            });
        }
    }
    for (i, keys) in jsons.iter().enumerate() {
        let mut extra: Vec<&str> = KEY_POOL
            .iter()
            .copied()
            .filter(|key| !keys.iter().any(|k| k == key))
            .collect();
        extra.shuffle(&mut rng);
        for (j, added) in extra.into_iter().take(k).enumerate() {
            let mut extended = keys.clone();
            extended.push(added.to_string());
            push(BenchCase {
                id: format!("json-keys_change-b{i:02}-v{j}"),
                base_id: i,
                prompt: json_prompt(&extended),
                task: TaskType::Json,
                perturbation: Perturbation::KeysChange,
                constraints: Constraints::json(JsonConstraint::new(extended)),
            });
        }
    }

    Ok(Suite {
        n_base,
        k,
        seed,
        warmup,
        cases,
    })
}
