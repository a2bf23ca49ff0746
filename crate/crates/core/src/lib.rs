//! Memory-boosted LLM serving: answer repeated queries from an
//! embedding-indexed memory instead of re-running an expensive model.
//!
//! The crate is organized around one loop (see [`controller`]): embed the
//! query, retrieve the nearest stored answers ([`ame`]), decide whether the
//! best one is good enough, escalate to the oracle model otherwise
//! ([`models`]), and write fresh oracle answers back for next time. The
//! supporting cast — [`workload`] (Zipf query streams over a JSONL corpus),
//! [`embedding`] (deterministic local embedder plus an HTTP remote),
//! [`metrics`] (step logs, cost accounting, windowed series), [`rng`]
//! (portable named-substream randomness), and [`synth`] (a generated
//! evaluation corpus) — exists so that whole benchmark runs are
//! reproducible byte for byte.
//!
//! Scoring the memory store is the one data-parallel hot spot; it runs on
//! rayon when the `parallel` feature (default) is enabled and falls back to
//! an identical sequential kernel without it. Results are bitwise equal
//! either way.

pub mod ame;
pub mod controller;
pub mod embedding;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod synth;
pub mod workload;

pub use ame::{AmeConfig, MemoryStore, RetrievalResult};
pub use controller::{
    AnswerSource, Controller, ControllerConfig, ControllerParts, LatencyAccounting, Policy,
    PromptTemplates, QueryInput, ServedAnswer,
};
pub use embedding::{Embedder, EmbedderConfig, EmbedderMode, EmbeddingVector};
pub use metrics::{CostParams, RunSummary, StepLog, StepRecord};
pub use models::{GenerationBackend, HttpModelClient, ModelEndpointConfig, ScriptedModel};
pub use workload::{QueryRecord, WorkloadConfig};
