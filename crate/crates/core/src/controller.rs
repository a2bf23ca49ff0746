//! The meta-controller: the per-query serving loop.
//!
//! Every query walks the same six steps — (1) embed, (2) retrieve from
//! memory, (3) decide, (4) answer from memory *or* (5) escalate to the
//! oracle, then (6) write the oracle's answer back unless suppressed — and
//! every step is reflected in the returned [`ServedAnswer`].
//!
//! Two decision policies exist. The **threshold** policy is a pure function:
//! use memory iff the best retrieval score reaches τ (inclusive — the
//! boundary choice keeps the exact-duplicate score-1.0 case robust to
//! rounding), and serve the stored answer verbatim. The **llm** policy asks
//! the MC model itself, via three external prompt templates (decision,
//! composition, write-back judgment); if the MC call fails, the query
//! degrades to the threshold policy and the answer is annotated
//! `mc_fallback`. Only oracle answers are ever written back — memory-path
//! compositions never re-enter the store, which prevents self-reinforcing
//! drift.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ame::{AmeError, EntryMeta, MemoryStore, RetrievalResult, ScoredEntry, StoreStats};
use crate::embedding::{Embedder, EmbeddingError};
use crate::metrics::CostParams;
use crate::models::{ChatMessage, GenerationBackend, GenerationRequest, ModelError, ScriptedHints};
use crate::rng::fnv1a64;
use crate::workload::{AnswerLabel, QueryRecord};

/// Reserved token the MC emits (own line) to demand escalation.
pub const ESCALATION_TOKEN: &str = "ESCALATE";
/// Reserved token the MC emits to decline a write-back.
pub const WRITE_BACK_DECLINE_TOKEN: &str = "SKIP";

/// Errors surfaced by the serving loop.
#[derive(Debug, thiserror::Error)]
pub enum ControllerError {
    #[error("invalid controller config: {0}")]
    InvalidConfig(String),
    #[error("query embedding failed: {0}")]
    Embedding(#[from] EmbeddingError),
    #[error("memory operation failed: {0}")]
    Memory(#[from] AmeError),
    #[error("oracle escalation failed: {0}")]
    OracleFailed(#[source] ModelError),
    #[error("{backend} backend failed its health check: {source}")]
    Unhealthy {
        backend: &'static str,
        #[source]
        source: ModelError,
    },
}

/// Decision policy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Threshold,
    Llm,
}

/// Controller configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Similarity threshold τ; memory is used iff the best score ≥ τ.
    pub tau: f32,
    /// Retrieval depth.
    pub top_k: usize,
    pub policy: Policy,
    pub write_back_enabled: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            tau: 0.95,
            top_k: 3,
            policy: Policy::Threshold,
            write_back_enabled: true,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(ControllerError::InvalidConfig(format!(
                "tau must be in (0, 1], got {}",
                self.tau
            )));
        }
        if self.top_k == 0 {
            return Err(ControllerError::InvalidConfig("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Where a served answer came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerSource {
    Memory,
    Oracle,
}

impl std::fmt::Display for AnswerSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AnswerSource::Memory => "memory",
            AnswerSource::Oracle => "oracle",
        })
    }
}

/// The fully accounted outcome of one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServedAnswer {
    pub t: u64,
    pub answer: String,
    pub source: AnswerSource,
    /// The indicator I_t: true exactly when `source` is memory.
    pub memory_used: bool,
    pub top_similarity: Option<f32>,
    pub wrote_back: bool,
    pub latency_seconds: f64,
    pub mc_cost: f64,
    pub retrieval_cost: f64,
    /// Zero on the memory path.
    pub oracle_cost: f64,
    /// True when an MC failure degraded this query to the threshold policy.
    pub mc_fallback: bool,
}

/// Outcome of the decide step.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    UseMemory(ScoredEntry),
    Escalate,
}

/// One incoming query, benchmark- or gateway-originated.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryInput {
    pub text: String,
    pub qid: Option<String>,
    pub category: Option<String>,
    pub options: Vec<String>,
    /// Known only in benchmark replays; forwarded to scripted backends.
    pub gold_label: Option<AnswerLabel>,
}

impl QueryInput {
    pub fn from_record(record: &QueryRecord) -> Self {
        Self {
            text: record.question.clone(),
            qid: Some(record.qid.clone()),
            category: Some(record.category.clone()),
            options: record.options.clone(),
            gold_label: Some(record.gold_label),
        }
    }

    pub fn from_text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            qid: None,
            category: None,
            options: Vec::new(),
            gold_label: None,
        }
    }

    /// Stable qid: the provided one, or a hash-derived ad-hoc id so
    /// metadata and scripted determinism still have a key.
    fn effective_qid(&self) -> String {
        match &self.qid {
            Some(qid) => qid.clone(),
            None => format!("adhoc-{:016x}", fnv1a64(self.text.as_bytes())),
        }
    }

    fn option_count(&self) -> usize {
        if self.options.is_empty() {
            crate::workload::MAX_OPTIONS
        } else {
            self.options.len()
        }
    }
}

/// How `latency_seconds` is produced.
///
/// Scripted runs use `Modeled`: a fixed per-query overhead plus the
/// backends' own (modeled) latencies, so logs are byte-reproducible.
/// Remote runs use `Measured` wall clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyAccounting {
    Modeled { overhead_seconds: f64 },
    Measured,
}

// ── Prompt templates ─────────────────────────────────────────────────────

/// The three MC prompt templates, with `{query}`, `{options}`, `{entries}`
/// (and `{answer}` in the write-back judgment) placeholders. Shipped
/// defaults are embedded; deployments can override from a directory of
/// `decision.txt`, `composition.txt`, `write_back.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub decision: String,
    pub composition: String,
    pub write_back: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            decision: include_str!("../prompts/decision.txt").to_string(),
            composition: include_str!("../prompts/composition.txt").to_string(),
            write_back: include_str!("../prompts/write_back.txt").to_string(),
        }
    }
}

impl PromptTemplates {
    /// Load all three templates from a directory.
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        Ok(Self {
            decision: std::fs::read_to_string(dir.join("decision.txt"))?,
            composition: std::fs::read_to_string(dir.join("composition.txt"))?,
            write_back: std::fs::read_to_string(dir.join("write_back.txt"))?,
        })
    }
}

/// Load few-shot exemplars from a UTF-8 file; exemplars are separated by a
/// line consisting solely of `---`. Used verbatim as oracle prompt prefix.
pub fn load_exemplars(path: &Path) -> std::io::Result<Vec<String>> {
    let raw = std::fs::read_to_string(path)?;
    let exemplars: Vec<String> = raw
        .split("\n---\n")
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    Ok(exemplars)
}

fn render_options(options: &[String]) -> String {
    if options.is_empty() {
        return "(no options provided)".into();
    }
    options
        .iter()
        .enumerate()
        .map(|(i, text)| {
            let letter = (b'A' + i as u8) as char;
            format!("({letter}) {text}")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_entries(retrieval: &RetrievalResult) -> String {
    if retrieval.entries.is_empty() {
        return "(memory returned nothing)".into();
    }
    retrieval
        .entries
        .iter()
        .enumerate()
        .map(|(i, s)| {
            format!(
                "[{}] similarity {:.4} | Q: {} | A: {}",
                i + 1,
                s.score,
                s.entry.query,
                s.entry.answer
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_template(template: &str, input: &QueryInput, retrieval: &RetrievalResult, answer: &str) -> String {
    template
        .replace("{query}", &input.text)
        .replace("{options}", &render_options(&input.options))
        .replace("{entries}", &render_entries(retrieval))
        .replace("{answer}", answer)
}

/// True when any line of the MC decision output starts (after indentation)
/// with the escalation token, compared case-insensitively.
pub fn contains_escalation_token(text: &str) -> bool {
    text.lines().any(|line| {
        line.trim_start()
            .get(..ESCALATION_TOKEN.len())
            .is_some_and(|head| head.eq_ignore_ascii_case(ESCALATION_TOKEN))
    })
}

/// True when the MC write-back judgment declines storage.
pub fn write_back_declined(text: &str) -> bool {
    text.lines().any(|line| {
        line.trim_start()
            .get(..WRITE_BACK_DECLINE_TOKEN.len())
            .is_some_and(|head| head.eq_ignore_ascii_case(WRITE_BACK_DECLINE_TOKEN))
    })
}

// ── Pure decision rules ──────────────────────────────────────────────────

/// Threshold decide: memory iff the best score reaches `tau` (inclusive);
/// empty retrieval always escalates.
pub fn threshold_decide(retrieval: &RetrievalResult, tau: f32) -> Decision {
    match retrieval.best() {
        Some(best) if best.score >= tau => Decision::UseMemory(best.clone()),
        _ => Decision::Escalate,
    }
}

/// Threshold write-back rule: store iff enabled and no retrieved entry is
/// already a near-duplicate (score ≥ `dup_threshold`).
pub fn threshold_write_back(
    retrieval: &RetrievalResult,
    write_back_enabled: bool,
    dup_threshold: f32,
) -> bool {
    write_back_enabled && !retrieval.entries.iter().any(|s| s.score >= dup_threshold)
}

// ── The controller ───────────────────────────────────────────────────────

/// Everything a [`Controller`] is built from.
pub struct ControllerParts {
    pub embedder: Embedder,
    pub store: MemoryStore,
    pub mc: Box<dyn GenerationBackend>,
    pub oracle: Box<dyn GenerationBackend>,
    pub config: ControllerConfig,
    pub costs: CostParams,
    pub prompts: PromptTemplates,
    /// Few-shot exemplars prefixed to oracle prompts (empty by default —
    /// the shipped configuration is 0-shot with this documented slot).
    pub exemplars: Vec<String>,
    pub latency: LatencyAccounting,
}

/// The serving loop. Shareable across threads: memory sits behind a
/// reader-writer lock, the step counter is atomic, and backends are
/// `Send + Sync`. Benchmark determinism additionally requires calling it
/// sequentially, which the benchmark runner does.
pub struct Controller {
    embedder: Embedder,
    store: RwLock<MemoryStore>,
    mc: Box<dyn GenerationBackend>,
    oracle: Box<dyn GenerationBackend>,
    config: ControllerConfig,
    costs: CostParams,
    prompts: PromptTemplates,
    exemplars: Vec<String>,
    latency: LatencyAccounting,
    step: AtomicU64,
}

impl Controller {
    pub fn new(parts: ControllerParts) -> Result<Self, ControllerError> {
        parts.config.validate()?;
        parts
            .costs
            .validate()
            .map_err(|e| ControllerError::InvalidConfig(e.to_string()))?;
        if parts.embedder.config().dim != parts.store.dim() {
            return Err(ControllerError::InvalidConfig(format!(
                "embedder dim {} does not match memory store dim {}",
                parts.embedder.config().dim,
                parts.store.dim()
            )));
        }
        Ok(Self {
            embedder: parts.embedder,
            store: RwLock::new(parts.store),
            mc: parts.mc,
            oracle: parts.oracle,
            config: parts.config,
            costs: parts.costs,
            prompts: parts.prompts,
            exemplars: parts.exemplars,
            latency: parts.latency,
            step: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn costs(&self) -> &CostParams {
        &self.costs
    }

    /// Queries served so far.
    pub fn steps_served(&self) -> u64 {
        self.step.load(Ordering::SeqCst)
    }

    pub fn memory_stats(&self) -> StoreStats {
        self.read_store().stats()
    }

    /// Snapshot the memory store to `path`; returns entries written.
    pub fn snapshot_memory(&self, path: &Path) -> Result<usize, AmeError> {
        self.read_store().snapshot(path)
    }

    /// Probe the embedder and both backends; used at gateway startup so a
    /// service never accepts traffic it cannot route.
    pub fn health_check(&self) -> Result<(), ControllerError> {
        self.embedder.health_check()?;
        self.mc
            .health_check()
            .map_err(|source| ControllerError::Unhealthy { backend: "mc", source })?;
        self.oracle
            .health_check()
            .map_err(|source| ControllerError::Unhealthy { backend: "oracle", source })?;
        Ok(())
    }

    fn read_store(&self) -> std::sync::RwLockReadGuard<'_, MemoryStore> {
        self.store.read().expect("memory store lock poisoned")
    }

    /// Serve one query through the full loop.
    pub fn handle_query(&self, input: &QueryInput) -> Result<ServedAnswer, ControllerError> {
        let t = self.step.fetch_add(1, Ordering::SeqCst) + 1;
        let started = Instant::now();
        let mut backend_seconds = 0.0_f64;
        let mut mc_fallback = false;

        // (1) Embed, (2) retrieve.
        let embedding = self.embedder.embed(&input.text)?;
        let (retrieval, dup_threshold) = {
            let store = self.read_store();
            (
                store.retrieve(&embedding, self.config.top_k)?,
                store.config().dup_threshold,
            )
        };
        let top_similarity = retrieval.best().map(|s| s.score);

        // (3) Decide.
        let decision = match self.config.policy {
            Policy::Threshold => threshold_decide(&retrieval, self.config.tau),
            Policy::Llm => {
                if retrieval.entries.is_empty() {
                    Decision::Escalate
                } else {
                    match self.mc_call(&self.prompts.decision, input, &retrieval, "") {
                        Ok(result) => {
                            backend_seconds += result.latency_seconds;
                            if contains_escalation_token(&result.text) {
                                Decision::Escalate
                            } else {
                                threshold_best(&retrieval)
                            }
                        }
                        Err(_) => {
                            mc_fallback = true;
                            threshold_decide(&retrieval, self.config.tau)
                        }
                    }
                }
            }
        };

        match decision {
            // (4) Memory path.
            Decision::UseMemory(best) => {
                // Once an MC call has failed, the rest of this query stays
                // on threshold behavior — no further MC calls.
                let compose = self.config.policy == Policy::Llm && !mc_fallback;
                let answer = if compose {
                    match self.mc_call(&self.prompts.composition, input, &retrieval, "") {
                        Ok(result) => {
                            backend_seconds += result.latency_seconds;
                            result.text
                        }
                        Err(_) => {
                            // Degraded composition: the threshold policy's
                            // verbatim reuse.
                            mc_fallback = true;
                            best.entry.answer.clone()
                        }
                    }
                } else {
                    best.entry.answer.clone()
                };
                Ok(ServedAnswer {
                    t,
                    answer,
                    source: AnswerSource::Memory,
                    memory_used: true,
                    top_similarity,
                    wrote_back: false,
                    latency_seconds: self.account_latency(started, backend_seconds),
                    mc_cost: self.costs.c_m,
                    retrieval_cost: self.costs.c_r,
                    oracle_cost: 0.0,
                    mc_fallback,
                })
            }
            // (5) Escalate.
            Decision::Escalate => {
                let oracle_request = self.oracle_request(input);
                let oracle_result = self
                    .oracle
                    .generate(&GenerationRequest {
                        messages: &oracle_request.0,
                        hints: oracle_request.1.as_ref().map(|h| ScriptedHints {
                            qid: &h.0,
                            gold_label: h.1,
                            option_count: h.2,
                        }),
                    })
                    .map_err(ControllerError::OracleFailed)?;
                backend_seconds += oracle_result.latency_seconds;

                // (6) Write-back.
                let wants_store = if !self.config.write_back_enabled {
                    false
                } else if self.config.policy == Policy::Llm && !mc_fallback {
                    let judged = match self.mc_call(
                        &self.prompts.write_back,
                        input,
                        &retrieval,
                        &oracle_result.text,
                    ) {
                        Ok(result) => {
                            backend_seconds += result.latency_seconds;
                            !write_back_declined(&result.text)
                        }
                        Err(_) => {
                            mc_fallback = true;
                            true
                        }
                    };
                    // The duplicate guard applies regardless of the MC's
                    // enthusiasm.
                    judged && threshold_write_back(&retrieval, true, dup_threshold)
                } else {
                    threshold_write_back(&retrieval, true, dup_threshold)
                };

                let mut wrote_back = false;
                if wants_store {
                    let meta = EntryMeta {
                        qid: input.effective_qid(),
                        category: input.category.clone().unwrap_or_else(|| "uncategorized".into()),
                        timestamp: t,
                    };
                    let outcome = self
                        .store
                        .write()
                        .expect("memory store lock poisoned")
                        .write_back(&input.text, &oracle_result.text, meta, embedding)?;
                    wrote_back = outcome.inserted;
                }

                Ok(ServedAnswer {
                    t,
                    answer: oracle_result.text,
                    source: AnswerSource::Oracle,
                    memory_used: false,
                    top_similarity,
                    wrote_back,
                    latency_seconds: self.account_latency(started, backend_seconds),
                    mc_cost: self.costs.c_m,
                    retrieval_cost: self.costs.c_r,
                    oracle_cost: self.costs.c_o,
                    mc_fallback,
                })
            }
        }
    }

    fn account_latency(&self, started: Instant, backend_seconds: f64) -> f64 {
        match self.latency {
            LatencyAccounting::Modeled { overhead_seconds } => overhead_seconds + backend_seconds,
            LatencyAccounting::Measured => started.elapsed().as_secs_f64(),
        }
    }

    fn mc_call(
        &self,
        template: &str,
        input: &QueryInput,
        retrieval: &RetrievalResult,
        answer: &str,
    ) -> Result<crate::models::GenerationResult, ModelError> {
        let content = render_template(template, input, retrieval, answer);
        let messages = [ChatMessage::user(content)];
        let qid = input.effective_qid();
        self.mc.generate(&GenerationRequest {
            messages: &messages,
            hints: Some(ScriptedHints {
                qid: &qid,
                gold_label: input.gold_label,
                option_count: input.option_count(),
            }),
        })
    }

    fn oracle_request(
        &self,
        input: &QueryInput,
    ) -> (Vec<ChatMessage>, Option<(String, Option<AnswerLabel>, usize)>) {
        let messages = oracle_messages(input, &self.exemplars);
        let hints = (
            input.effective_qid(),
            input.gold_label,
            input.option_count(),
        );
        (messages, Some(hints))
    }
}

/// The oracle-facing prompt for a query: optional few-shot exemplars, the
/// answer-format instruction, the question, and its options. Shared with
/// the baseline run modes so oracle-only runs see the same prompt the
/// escalation path sends.
pub fn oracle_messages(input: &QueryInput, exemplars: &[String]) -> Vec<ChatMessage> {
    let mut content = String::new();
    for exemplar in exemplars {
        content.push_str(exemplar);
        content.push_str("\n\n");
    }
    content.push_str(
        "Answer the following multiple-choice question. Reason step by step, \
         then finish with one sentence of the form: the answer is (X).\n\n",
    );
    content.push_str(&input.text);
    if !input.options.is_empty() {
        content.push_str("\n\nOptions:\n");
        content.push_str(&render_options(&input.options));
    }
    vec![ChatMessage::user(content)]
}

/// The best entry as a memory decision; callers guarantee non-empty
/// retrieval.
fn threshold_best(retrieval: &RetrievalResult) -> Decision {
    match retrieval.best() {
        Some(best) => Decision::UseMemory(best.clone()),
        None => Decision::Escalate,
    }
}
