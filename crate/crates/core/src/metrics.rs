//! Cost model and reporting metrics over step logs.
//!
//! A serving run is summarized from its per-step log alone. The cost model
//! charges every step a controller fee `c_M` and a retrieval fee `c_R`, and
//! escalated steps additionally the oracle fee `c_O`:
//!
//! ```text
//! C_T = Σ_t (c_M + c_R) + Σ_t (1 − I_t) · c_O
//! ```
//!
//! against an oracle-only baseline of `Σ_t c_O`, so reuse saves money
//! exactly when the avoided oracle calls outweigh the added overhead:
//! `Σ I_t·c_O > Σ (c_M + c_R)`. Costs are per-query constants by default;
//! a per-step override column exists for query-dependent oracle pricing but
//! nothing in the shipped runners sets it. All functions here are pure over
//! immutable logs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::workload::AnswerLabel;

/// Default window (steps) for the memory-use rate series.
pub const MEMORY_RATE_WINDOW: usize = 200;
/// Default window (steps) for the latency series.
pub const LATENCY_WINDOW: usize = 100;

/// Errors from log handling and metric evaluation.
#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("metric requires a non-empty log")]
    EmptyLog,
    #[error("window must be at least 1")]
    InvalidWindow,
    #[error("invalid step log at position {index}: {message}")]
    CorruptLog { index: usize, message: String },
    #[error("step log io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("step log {path} line {line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid cost params: {0}")]
    InvalidParams(String),
}

/// Abstract per-query costs. Defaults put the oracle far above the
/// controller-plus-retrieval overhead, the regime where reuse pays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Meta-controller cost, charged on every step.
    pub c_m: f64,
    /// Retrieval cost, charged on every step.
    pub c_r: f64,
    /// Oracle cost, charged on escalated steps only.
    pub c_o: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self { c_m: 0.01, c_r: 0.02, c_o: 1.0 }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<(), MetricsError> {
        for (name, v) in [("c_m", self.c_m), ("c_r", self.c_r), ("c_o", self.c_o)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(MetricsError::InvalidParams(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Serialize the 0/1 indicator fields as integers, the log's on-disk shape.
mod int_bool {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &bool, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u8(u8::from(*value))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<bool, D::Error> {
        match u8::deserialize(deserializer)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!(
                "indicator must be 0 or 1, got {other}"
            ))),
        }
    }
}

/// One step of a run, as logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based step index; consecutive within a log.
    pub t: u64,
    pub qid: String,
    /// The indicator I_t: 1 when the answer came from memory.
    #[serde(with = "int_bool")]
    pub memory_used: bool,
    pub latency_seconds: f64,
    /// Label parsed from the served answer; absent when unparseable.
    pub predicted_label: Option<AnswerLabel>,
    pub gold_label: AnswerLabel,
    /// 1 iff `predicted_label` equals `gold_label`.
    #[serde(with = "int_bool")]
    pub correct: bool,
    pub wrote_back: bool,
    pub top_similarity: Option<f32>,
    /// Query-specific oracle cost, overriding `CostParams::c_o` for this
    /// step in both the run total and the baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_cost_override: Option<f64>,
}

impl StepRecord {
    /// Build a record, deriving `correct` from the two labels.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        t: u64,
        qid: impl Into<String>,
        memory_used: bool,
        latency_seconds: f64,
        predicted_label: Option<AnswerLabel>,
        gold_label: AnswerLabel,
        wrote_back: bool,
        top_similarity: Option<f32>,
    ) -> Self {
        Self {
            t,
            qid: qid.into(),
            memory_used,
            latency_seconds,
            predicted_label,
            gold_label,
            correct: predicted_label == Some(gold_label),
            wrote_back,
            top_similarity,
            oracle_cost_override: None,
        }
    }

    fn check(&self, index: usize) -> Result<(), MetricsError> {
        let fail = |message: String| Err(MetricsError::CorruptLog { index, message });
        if self.t != (index + 1) as u64 {
            return fail(format!("t = {}, expected {} (consecutive from 1)", self.t, index + 1));
        }
        if self.correct != (self.predicted_label == Some(self.gold_label)) {
            return fail("correct flag disagrees with the labels".into());
        }
        if !(self.latency_seconds >= 0.0) || !self.latency_seconds.is_finite() {
            return fail(format!("latency_seconds = {} out of range", self.latency_seconds));
        }
        if let Some(s) = self.top_similarity {
            if !s.is_finite() {
                return fail("top_similarity is not finite".into());
            }
        }
        Ok(())
    }
}

/// An ordered, validated step log: `t` runs 1..=T with no gaps, and every
/// record's `correct` flag matches its labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepLog {
    records: Vec<StepRecord>,
}

impl StepLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<StepRecord>) -> Result<Self, MetricsError> {
        for (i, r) in records.iter().enumerate() {
            r.check(i)?;
        }
        Ok(Self { records })
    }

    /// Append the next step; it must continue the sequence.
    pub fn push(&mut self, record: StepRecord) -> Result<(), MetricsError> {
        record.check(self.records.len())?;
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Write as JSONL, one record per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<(), MetricsError> {
        let io_err = |source| MetricsError::Io { path: path.to_path_buf(), source };
        let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
        for r in &self.records {
            let line = serde_json::to_string(r).map_err(|e| io_err(std::io::Error::other(e)))?;
            writeln!(out, "{line}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }

    /// Read and validate a JSONL log.
    pub fn read_jsonl(path: &Path) -> Result<Self, MetricsError> {
        let file = File::open(path).map_err(|source| MetricsError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut records = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| MetricsError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: StepRecord =
                serde_json::from_str(&line).map_err(|e| MetricsError::Malformed {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            records.push(record);
        }
        Self::from_records(records)
    }
}

/// Oracle-cost sum over the selected steps, honoring per-step overrides.
/// The constant part is computed as count × c_O so the documented
/// decomposition `T·(c_M+c_R) + oracle_call_count·c_O` holds *exactly* when
/// no overrides are present.
fn oracle_cost_sum<'a>(records: impl Iterator<Item = &'a StepRecord>, c_o: f64) -> f64 {
    let mut constant_steps = 0u64;
    let mut override_sum = 0.0_f64;
    for r in records {
        match r.oracle_cost_override {
            Some(v) => override_sum += v,
            None => constant_steps += 1,
        }
    }
    constant_steps as f64 * c_o + override_sum
}

/// Total run cost `C_T`.
pub fn total_cost(log: &StepLog, params: &CostParams) -> Result<f64, MetricsError> {
    if log.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    params.validate()?;
    let overhead = log.len() as f64 * (params.c_m + params.c_r);
    let oracle = oracle_cost_sum(log.records().iter().filter(|r| !r.memory_used), params.c_o);
    Ok(overhead + oracle)
}

/// What an oracle-only deployment would have paid for the same stream.
pub fn oracle_only_cost(log: &StepLog, params: &CostParams) -> Result<f64, MetricsError> {
    if log.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    params.validate()?;
    Ok(oracle_cost_sum(log.records().iter(), params.c_o))
}

/// Whether the run beat the oracle-only baseline, evaluated in its algebraic
/// form: the oracle cost *avoided* on memory steps must exceed the overhead
/// paid on all steps. Agrees with `total_cost < oracle_only_cost` by the
/// cost identity (property-tested rather than assumed).
pub fn savings_condition(log: &StepLog, params: &CostParams) -> Result<bool, MetricsError> {
    if log.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    params.validate()?;
    let avoided = oracle_cost_sum(log.records().iter().filter(|r| r.memory_used), params.c_o);
    let overhead = log.len() as f64 * (params.c_m + params.c_r);
    Ok(avoided > overhead)
}

/// Sliding-window means over `values`, reported for t ≥ window only (never
/// padded). Prefix sums make each point exact in the inputs and stable
/// under appending future steps.
fn windowed_series(values: &[f64], window: usize) -> Result<Vec<(u64, f64)>, MetricsError> {
    if window == 0 {
        return Err(MetricsError::InvalidWindow);
    }
    let mut prefix = Vec::with_capacity(values.len() + 1);
    prefix.push(0.0_f64);
    for &v in values {
        prefix.push(prefix.last().unwrap() + v);
    }
    let mut series = Vec::new();
    for t in window..=values.len() {
        series.push((t as u64, (prefix[t] - prefix[t - window]) / window as f64));
    }
    Ok(series)
}

/// Memory-use rate Ī_t averaged over the previous `window` steps.
pub fn windowed_memory_rate(log: &StepLog, window: usize) -> Result<Vec<(u64, f64)>, MetricsError> {
    let values: Vec<f64> = log.records().iter().map(|r| f64::from(u8::from(r.memory_used))).collect();
    windowed_series(&values, window)
}

/// Mean latency over the previous `window` steps.
pub fn windowed_latency(log: &StepLog, window: usize) -> Result<Vec<(u64, f64)>, MetricsError> {
    let values: Vec<f64> = log.records().iter().map(|r| r.latency_seconds).collect();
    windowed_series(&values, window)
}

/// Fraction of steps answered correctly; an unparseable prediction counts
/// as incorrect.
pub fn accuracy(log: &StepLog) -> Result<f64, MetricsError> {
    if log.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let correct = log.records().iter().filter(|r| r.correct).count();
    Ok(correct as f64 / log.len() as f64)
}

/// Aggregate view of one run. The two series back the plot-ready CSV files
/// and are not embedded in the JSON summary document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub num_steps: u64,
    pub accuracy: f64,
    pub total_cost: f64,
    pub oracle_only_cost: f64,
    pub savings_holds: bool,
    /// Steps served off the expensive path (I_t = 0). In memboost mode this
    /// counts oracle calls exactly; in other run modes it counts whatever
    /// generation replaced them.
    pub oracle_call_count: u64,
    pub memory_hit_count: u64,
    pub write_back_count: u64,
    #[serde(skip)]
    pub memory_rate_series: Vec<(u64, f64)>,
    #[serde(skip)]
    pub latency_series: Vec<(u64, f64)>,
}

/// Compute the full summary with the default reporting windows.
pub fn compute_summary(log: &StepLog, params: &CostParams) -> Result<RunSummary, MetricsError> {
    let memory_hit_count = log.records().iter().filter(|r| r.memory_used).count() as u64;
    let write_back_count = log.records().iter().filter(|r| r.wrote_back).count() as u64;
    Ok(RunSummary {
        num_steps: log.len() as u64,
        accuracy: accuracy(log)?,
        total_cost: total_cost(log, params)?,
        oracle_only_cost: oracle_only_cost(log, params)?,
        savings_holds: savings_condition(log, params)?,
        oracle_call_count: log.len() as u64 - memory_hit_count,
        memory_hit_count,
        write_back_count,
        memory_rate_series: windowed_memory_rate(log, MEMORY_RATE_WINDOW)?,
        latency_series: windowed_latency(log, LATENCY_WINDOW)?,
    })
}
