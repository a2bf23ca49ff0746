//! The benchmark runner: replay a Zipf query stream through one of the
//! three run modes and leave a complete audit trail.
//!
//! The stream is processed strictly sequentially — that, plus scripted
//! backends and modeled latencies, is what makes two runs of the same
//! config byte-identical. Step records stream to `steplog.jsonl` as they
//! happen, so a mid-run backend failure still leaves the partial log on
//! disk (flushed) before the run aborts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::Context;

use memboost_core::controller::{oracle_messages, QueryInput};
use memboost_core::metrics::{compute_summary, RunSummary, StepLog, StepRecord};
use memboost_core::models::{extract_label, GenerationRequest, ModelRole, ScriptedHints};
use memboost_core::workload::{load_corpus, sample_stream};

use crate::config::{BenchmarkConfig, RunMode};
use crate::report::{emit_report, ReportPaths};

/// Everything a finished run leaves behind.
#[derive(Debug)]
pub struct BenchArtifacts {
    pub summary: RunSummary,
    pub steplog_path: PathBuf,
    pub report: ReportPaths,
}

/// Run one benchmark to completion and write all artifact files.
pub fn run_benchmark(config: &BenchmarkConfig) -> anyhow::Result<BenchArtifacts> {
    std::fs::create_dir_all(&config.out_dir)
        .with_context(|| format!("creating output directory {}", config.out_dir.display()))?;

    let corpus = load_corpus(&config.corpus_path, config.corpus_limit)
        .with_context(|| format!("loading corpus {}", config.corpus_path.display()))?;
    let events = sample_stream(&corpus, &config.workload).context("sampling query stream")?;

    let steplog_path = config.out_dir.join("steplog.jsonl");
    let file = File::create(&steplog_path)
        .with_context(|| format!("creating {}", steplog_path.display()))?;
    let mut writer = BufWriter::new(file);
    let mut records: Vec<StepRecord> = Vec::with_capacity(events.len());

    // One closure per mode returning the fields a StepRecord needs beyond
    // the event itself: (memory_used, latency, answer, wrote_back, top_sim).
    let mut run_step: Box<dyn FnMut(u64, &memboost_core::workload::QueryRecord) -> anyhow::Result<(bool, f64, String, bool, Option<f32>)>> =
        match config.run_mode {
            RunMode::Memboost => {
                let controller = config.spec.build()?;
                Box::new(move |_t, record| {
                    let served = controller.handle_query(&QueryInput::from_record(record))?;
                    Ok((
                        served.memory_used,
                        served.latency_seconds,
                        served.answer,
                        served.wrote_back,
                        served.top_similarity,
                    ))
                })
            }
            RunMode::OracleOnly | RunMode::McOnly => {
                let role = match config.run_mode {
                    RunMode::OracleOnly => ModelRole::Oracle,
                    _ => ModelRole::Mc,
                };
                let backend = config.spec.build_single_backend(role)?;
                let exemplars = match &config.spec.exemplars_path {
                    Some(path) => memboost_core::controller::load_exemplars(path)
                        .with_context(|| format!("loading exemplars from {}", path.display()))?,
                    None => Vec::new(),
                };
                Box::new(move |_t, record| {
                    let messages = oracle_messages(&QueryInput::from_record(record), &exemplars);
                    let result = backend.generate(&GenerationRequest {
                        messages: &messages,
                        hints: Some(ScriptedHints {
                            qid: &record.qid,
                            gold_label: Some(record.gold_label),
                            option_count: record.options.len(),
                        }),
                    })?;
                    // Baselines report the backend's own latency: the
                    // client-observed cost of skipping the memory loop.
                    Ok((false, result.latency_seconds, result.text, false, None))
                })
            }
        };

    for event in &events {
        let outcome = run_step(event.t, event.record);
        let (memory_used, latency, answer, wrote_back, top_similarity) = match outcome {
            Ok(fields) => fields,
            Err(e) => {
                // Abort with whatever has been logged so far safely on disk.
                writer.flush().ok();
                return Err(e.context(format!(
                    "backend failure at step {} (qid {}); partial log flushed to {}",
                    event.t,
                    event.record.qid,
                    steplog_path.display()
                )));
            }
        };
        let record = StepRecord::new(
            event.t,
            &event.record.qid,
            memory_used,
            latency,
            extract_label(&answer, event.record.options.len()),
            event.record.gold_label,
            wrote_back,
            top_similarity,
        );
        let line = serde_json::to_string(&record).context("serializing step record")?;
        writeln!(writer, "{line}").context("writing step record")?;
        records.push(record);
    }
    writer.flush().context("flushing step log")?;

    let log = StepLog::from_records(records).context("validating step log")?;
    let summary = compute_summary(&log, &config.spec.costs).context("computing summary")?;
    let report = emit_report(&summary, &config.out_dir)?;

    Ok(BenchArtifacts { summary, steplog_path, report })
}
