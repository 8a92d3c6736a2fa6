use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{BackendCall, BackendError, CallType};

/// One structured-log line per gateway call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub seq: u64,
    pub request_id: String,
    pub call_type: CallType,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub attempts: u32,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
    pub latency: f64,
}

impl CallRecord {
    pub(super) fn success(call: &BackendCall, attempts: u32) -> Self {
        Self {
            seq: 0,
            request_id: call.request_id.clone(),
            call_type: call.call_type,
            ok: true,
            error: None,
            attempts,
            prompt_tokens: call.prompt_tokens,
            completion_tokens: call.completion_tokens,
            total_tokens: call.total_tokens,
            latency: call.latency,
        }
    }

    pub(super) fn failure(
        request_id: &str,
        call_type: CallType,
        attempts: u32,
        latency: f64,
        error: &BackendError,
    ) -> Self {
        Self {
            seq: 0,
            request_id: request_id.to_string(),
            call_type,
            ok: false,
            error: Some(error.to_string()),
            attempts,
            prompt_tokens: 0,
            completion_tokens: 0,
            total_tokens: 0,
            latency,
        }
    }
}

#[derive(Default)]
struct LogState {
    records: Vec<CallRecord>,
    sink: Option<File>,
}

/// Append-only call log, optionally mirrored to a JSON Lines file.
#[derive(Default)]
pub struct CallLog {
    state: Mutex<LogState>,
}

impl std::fmt::Debug for CallLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CallLog").field("len", &self.len()).finish()
    }
}

impl CallLog {
    /// Also appends every record to `path`.
    pub fn with_file(path: impl AsRef<Path>) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            state: Mutex::new(LogState {
                records: Vec::new(),
                sink: Some(file),
            }),
        })
    }

    pub fn append(&self, mut record: CallRecord) {
        let mut state = self.state.lock();
        record.seq = state.records.len() as u64;
        if let Some(file) = state.sink.as_mut() {
            let line = serde_json::to_string(&record).expect("call record serializes");
            if let Err(e) = writeln!(file, "{line}") {
                tracing::warn!(error = %e, "failed to write call log");
            }
        }
        state.records.push(record);
    }

    pub fn records(&self) -> Vec<CallRecord> {
        self.state.lock().records.clone()
    }

    pub fn records_for(&self, request_id: &str) -> Vec<CallRecord> {
        self.state
            .lock()
            .records
            .iter()
            .filter(|r| r.request_id == request_id)
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.state.lock().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_tokens(&self) -> u64 {
        self.state.lock().records.iter().map(|r| r.total_tokens).sum()
    }
}
