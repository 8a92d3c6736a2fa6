//! Chat-completions proxy that serves requests through a step-level cache.
//!
//! `POST /v1/chat/completions` accepts ordinary chat requests. An optional
//! `stepcache` object in the body selects the task type and constraints:
//!
//! ```json
//! {"messages": [{"role": "user", "content": "Solve 2x + 3 = 13 for x."}],
//!  "stepcache": {"task_type": "math"}}
//! ```
//!
//! Responses carry a `stepcache` block with the outcome path and per-step
//! provenance. `GET /stats` reports counters and latency aggregates.

pub mod config;
mod service;

pub use config::{ConfigError, ServiceConfig};
pub use service::{Service, ServiceError, StatsBody, TASK_HEADER};
