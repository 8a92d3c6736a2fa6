//! Step-level response reuse for LLM serving.
//!
//! `stepcache` sits in front of a chat-completions backend. Responses are
//! segmented into steps and cached with a prompt embedding. A new request
//! retrieves the closest cached response, verifies its steps against the new
//! request with rule-based checks, regenerates only the steps that fail, and
//! validates the stitched result before returning it.
//!
//! * [`segment`]: splitting responses into steps and stitching them back.
//! * [`verify`]: linear-equation and JSON verifiers.
//! * [`store`]: embeddings, nearest-neighbour retrieval and persistence.
//! * [`backend`]: the model gateway, HTTP client and simulator.
//! * [`orchestrator`]: the per-request reuse/patch/skip pipeline.
//! * [`metrics`]: counters and run statistics.

pub mod backend;
pub mod metrics;
pub mod orchestrator;
pub mod segment;
pub mod store;
pub mod verify;

pub use backend::{Backend, BackendError, CallType, Gateway, GatewayConfig, HttpBackend, HttpConfig, SimBackend, SimConfig};
pub use orchestrator::{Orchestrator, OrchestratorConfig, OrchestratorError, Origin, Path, Request, RequestOutcome};
pub use store::{CacheStore, Constraints, TaskType, TrigramEmbedder};
