//! Run and serve configuration, plus the shared controller builder.
//!
//! Both operational surfaces — the benchmark runner and the HTTP gateway —
//! assemble the same serving stack (embedder, memory store, MC, oracle)
//! from a [`ControllerSpec`]. Keeping one builder is what makes the
//! gateway/benchmark parity property testable rather than aspirational.

use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Context;

use memboost_core::ame::{AmeConfig, MemoryStore};
use memboost_core::controller::{
    load_exemplars, Controller, ControllerConfig, ControllerParts, LatencyAccounting,
    PromptTemplates,
};
use memboost_core::embedding::{Embedder, EmbedderConfig};
use memboost_core::metrics::CostParams;
use memboost_core::models::{
    GenerationBackend, HttpModelClient, ModelEndpointConfig, ModelRole, ScriptedModel,
    ScriptedModelConfig,
};
use memboost_core::workload::WorkloadConfig;

/// Which pipeline the benchmark drives for each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    /// The full loop: retrieve, decide, escalate, write back.
    Memboost,
    /// Every query goes to the oracle; the cost and latency baseline.
    OracleOnly,
    /// Every query goes to the MC as a plain generator; the cheap baseline.
    McOnly,
}

impl RunMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunMode::Memboost => "memboost",
            RunMode::OracleOnly => "oracle-only",
            RunMode::McOnly => "mc-only",
        }
    }
}

/// MC + oracle backend selection.
#[derive(Debug, Clone)]
pub enum BackendSpec {
    /// Deterministic in-process models; no network, modeled latencies.
    Scripted {
        mc: ScriptedModelConfig,
        oracle: ScriptedModelConfig,
    },
    /// Real chat-completions endpoints; measured latencies.
    Remote {
        mc: ModelEndpointConfig,
        oracle: ModelEndpointConfig,
    },
}

impl BackendSpec {
    /// Scripted backends with the given accuracies/latencies, seeded from
    /// one knob: the oracle draws from `seed`, the MC from `seed + 1`.
    pub fn scripted(
        seed: u64,
        oracle_accuracy: f64,
        oracle_latency: f64,
        mc_accuracy: f64,
        mc_latency: f64,
    ) -> Self {
        BackendSpec::Scripted {
            mc: ScriptedModelConfig {
                accuracy_rate: mc_accuracy,
                fixed_latency_seconds: mc_latency,
                seed: seed.wrapping_add(1),
                ..ScriptedModelConfig::default()
            },
            oracle: ScriptedModelConfig {
                accuracy_rate: oracle_accuracy,
                fixed_latency_seconds: oracle_latency,
                seed,
                ..ScriptedModelConfig::default()
            },
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        match self {
            BackendSpec::Scripted { mc, oracle } => {
                mc.validate().context("scripted mc config")?;
                oracle.validate().context("scripted oracle config")?;
            }
            BackendSpec::Remote { mc, oracle } => {
                anyhow::ensure!(
                    mc.role == ModelRole::Mc && oracle.role == ModelRole::Oracle,
                    "remote backends must carry distinct roles (mc vs oracle)"
                );
            }
        }
        Ok(())
    }

    pub fn is_remote(&self) -> bool {
        matches!(self, BackendSpec::Remote { .. })
    }
}

/// Everything needed to assemble one serving stack.
#[derive(Debug, Clone)]
pub struct ControllerSpec {
    pub embedder: EmbedderConfig,
    pub ame: AmeConfig,
    pub controller: ControllerConfig,
    pub costs: CostParams,
    pub backend: BackendSpec,
    /// Fixed controller overhead added to modeled latencies (scripted
    /// backends only); the memory path's entire modeled latency.
    pub overhead_latency_seconds: f64,
    /// Optional prompt-template directory overriding the embedded set.
    pub prompts_dir: Option<PathBuf>,
    /// Optional few-shot exemplar file for oracle prompts.
    pub exemplars_path: Option<PathBuf>,
    /// Memory snapshot loaded at startup when the file exists.
    pub snapshot_path: Option<PathBuf>,
}

impl ControllerSpec {
    /// Scripted-backend spec with all defaults: local embedder, τ = 0.95,
    /// k = 3, perfect oracle at 0.20 s, MC at 0.05 s, overhead 0.01 s.
    pub fn scripted_default(seed: u64) -> Self {
        Self {
            embedder: EmbedderConfig::local_default(),
            ame: AmeConfig::default(),
            controller: ControllerConfig::default(),
            costs: CostParams::default(),
            backend: BackendSpec::scripted(seed, 1.0, 0.20, 1.0, 0.05),
            overhead_latency_seconds: 0.01,
            prompts_dir: None,
            exemplars_path: None,
            snapshot_path: None,
        }
    }

    /// Assemble the full stack. Loads the snapshot when configured and
    /// present; a missing snapshot file is a cold start, not an error.
    pub fn build(&self) -> anyhow::Result<Controller> {
        self.backend.validate()?;
        let embedder = Embedder::new(self.embedder.clone()).context("embedder config")?;

        let store = match &self.snapshot_path {
            Some(path) if path.exists() => {
                MemoryStore::load_snapshot(path, self.embedder.dim, self.ame.clone())
                    .with_context(|| format!("loading memory snapshot {}", path.display()))?
            }
            _ => MemoryStore::new(self.embedder.dim, self.ame.clone()),
        };

        let (mc, oracle): (Box<dyn GenerationBackend>, Box<dyn GenerationBackend>) =
            match &self.backend {
                BackendSpec::Scripted { mc, oracle } => (
                    Box::new(ScriptedModel::new(mc.clone()).context("scripted mc")?),
                    Box::new(ScriptedModel::new(oracle.clone()).context("scripted oracle")?),
                ),
                BackendSpec::Remote { mc, oracle } => (
                    Box::new(HttpModelClient::new(mc.clone()).context("mc endpoint")?),
                    Box::new(HttpModelClient::new(oracle.clone()).context("oracle endpoint")?),
                ),
            };

        let prompts = match &self.prompts_dir {
            Some(dir) => PromptTemplates::load_dir(dir)
                .with_context(|| format!("loading prompt templates from {}", dir.display()))?,
            None => PromptTemplates::default(),
        };
        let exemplars = match &self.exemplars_path {
            Some(path) => load_exemplars(path)
                .with_context(|| format!("loading exemplars from {}", path.display()))?,
            None => Vec::new(),
        };

        let latency = if self.backend.is_remote() {
            LatencyAccounting::Measured
        } else {
            LatencyAccounting::Modeled { overhead_seconds: self.overhead_latency_seconds }
        };

        Controller::new(ControllerParts {
            embedder,
            store,
            mc,
            oracle,
            config: self.controller,
            costs: self.costs,
            prompts,
            exemplars,
            latency,
        })
        .context("assembling controller")
    }

    /// Build just one generation backend; the oracle-only and mc-only run
    /// modes bypass the controller entirely.
    pub fn build_single_backend(&self, role: ModelRole) -> anyhow::Result<Box<dyn GenerationBackend>> {
        self.backend.validate()?;
        Ok(match (&self.backend, role) {
            (BackendSpec::Scripted { oracle, .. }, ModelRole::Oracle) => {
                Box::new(ScriptedModel::new(oracle.clone())?)
            }
            (BackendSpec::Scripted { mc, .. }, ModelRole::Mc) => {
                Box::new(ScriptedModel::new(mc.clone())?)
            }
            (BackendSpec::Remote { oracle, .. }, ModelRole::Oracle) => {
                Box::new(HttpModelClient::new(oracle.clone())?)
            }
            (BackendSpec::Remote { mc, .. }, ModelRole::Mc) => {
                Box::new(HttpModelClient::new(mc.clone())?)
            }
        })
    }
}

/// One benchmark run, end to end.
#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub corpus_path: PathBuf,
    /// Cap on corpus records read (working-set truncation).
    pub corpus_limit: Option<usize>,
    pub workload: WorkloadConfig,
    pub run_mode: RunMode,
    pub out_dir: PathBuf,
    pub spec: ControllerSpec,
}

/// The long-running HTTP gateway.
#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub listen: SocketAddr,
    /// Optional corpus giving gold labels by qid: enables accuracy in
    /// /stats and gold hints for scripted backends.
    pub corpus_path: Option<PathBuf>,
    pub corpus_limit: Option<usize>,
    pub spec: ControllerSpec,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_default_builds_a_working_stack() {
        let controller = ControllerSpec::scripted_default(1).build().unwrap();
        assert_eq!(controller.memory_stats().entry_count, 0);
        controller.health_check().unwrap();
    }

    #[test]
    fn remote_backends_must_have_distinct_roles() {
        let bad = BackendSpec::Remote {
            mc: ModelEndpointConfig::new("http://localhost:1", "m", ModelRole::Oracle),
            oracle: ModelEndpointConfig::new("http://localhost:2", "o", ModelRole::Oracle),
        };
        assert!(bad.validate().is_err());

        let good = BackendSpec::Remote {
            mc: ModelEndpointConfig::new("http://localhost:1", "m", ModelRole::Mc),
            oracle: ModelEndpointConfig::new("http://localhost:2", "o", ModelRole::Oracle),
        };
        good.validate().unwrap();
    }

    #[test]
    fn missing_snapshot_is_a_cold_start() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = ControllerSpec::scripted_default(1);
        spec.snapshot_path = Some(dir.path().join("absent.jsonl"));
        let controller = spec.build().unwrap();
        assert_eq!(controller.memory_stats().entry_count, 0);
    }

    #[test]
    fn snapshot_is_loaded_when_present() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("memory.jsonl");

        let warm = ControllerSpec::scripted_default(1).build().unwrap();
        let input = memboost_core::controller::QueryInput::from_text(
            "What distinguishes gross margin from net margin?",
        );
        warm.handle_query(&input).unwrap();
        assert_eq!(warm.snapshot_memory(&path).unwrap(), 1);

        let mut spec = ControllerSpec::scripted_default(1);
        spec.snapshot_path = Some(path);
        let reloaded = spec.build().unwrap();
        assert_eq!(reloaded.memory_stats().entry_count, 1);
        // The reloaded store answers the same question from memory.
        let served = reloaded.handle_query(&input).unwrap();
        assert_eq!(served.source, memboost_core::controller::AnswerSource::Memory);
    }
}
