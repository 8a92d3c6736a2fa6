use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::embed::Embedding;
use crate::segment::Step;
use crate::verify::JsonConstraint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    Math,
    Json,
    Other,
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskType::Math => "math",
            TaskType::Json => "json",
            TaskType::Other => "other",
        })
    }
}

/// Per-request constraints stored alongside a cached entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraints {
    task_type: TaskType,
    #[serde(default)]
    required_keys: JsonConstraint,
    #[serde(default)]
    force_skip_reuse: bool,
}

impl Constraints {
    pub fn math() -> Self {
        Self::of(TaskType::Math)
    }

    pub fn json(required_keys: JsonConstraint) -> Self {
        Self {
            task_type: TaskType::Json,
            required_keys,
            force_skip_reuse: false,
        }
    }

    pub fn other() -> Self {
        Self::of(TaskType::Other)
    }

    /// Constraints for `task_type` with no required keys. Use [`Constraints::json`]
    /// to attach keys.
    pub fn of(task_type: TaskType) -> Self {
        Self {
            task_type,
            required_keys: JsonConstraint::default(),
            force_skip_reuse: false,
        }
    }

    pub fn with_force_skip(mut self, force: bool) -> Self {
        self.force_skip_reuse = force;
        self
    }

    pub fn task_type(&self) -> TaskType {
        self.task_type
    }

    pub fn required_keys(&self) -> &JsonConstraint {
        &self.required_keys
    }

    pub fn force_skip_reuse(&self) -> bool {
        self.force_skip_reuse
    }

    pub(crate) fn is_valid(&self) -> bool {
        self.task_type == TaskType::Json || self.required_keys.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntryId(pub u64);

impl fmt::Display for EntryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub created_at_ms: u64,
    /// Identifier of the backend call (request) that produced the steps.
    pub created_by: String,
}

impl Provenance {
    pub fn now(created_by: impl Into<String>) -> Self {
        let created_at_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Self {
            created_at_ms,
            created_by: created_by.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryCounters {
    pub hits: u64,
    pub patches: u64,
    pub skips: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CounterKind {
    Hit,
    Patch,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub id: EntryId,
    pub prompt: String,
    pub embedding: Embedding,
    pub steps: Vec<Step>,
    pub constraints: Constraints,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_outputs: Vec<serde_json::Value>,
    pub provenance: Provenance,
    #[serde(default)]
    pub counters: EntryCounters,
}

impl CacheEntry {
    pub fn task_type(&self) -> TaskType {
        self.constraints.task_type()
    }
}
