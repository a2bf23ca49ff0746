//! `memboost` — benchmark runner, HTTP gateway, and corpus generator.
//!
//! Every flag can also be set through an environment variable with the
//! `GATEWAY_` prefix (e.g. `GATEWAY_TAU=0.9`); explicit flags win over the
//! environment, which wins over defaults.

use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use memboost_core::ame::AmeConfig;
use memboost_core::controller::{ControllerConfig, Policy};
use memboost_core::embedding::{EmbedderConfig, DEFAULT_REMOTE_EMBED_MODEL};
use memboost_core::metrics::CostParams;
use memboost_core::models::{ModelEndpointConfig, ModelRole};
use memboost_core::synth::{generate_corpus, write_corpus_jsonl};
use memboost_core::workload::WorkloadConfig;

use memboost_gateway::config::{
    BackendSpec, BenchmarkConfig, ControllerSpec, GatewayConfig, RunMode,
};
use memboost_gateway::http;
use memboost_gateway::runner::run_benchmark;

#[derive(Parser)]
#[command(
    name = "memboost",
    version,
    about = "Memory-boosted LLM serving: benchmark harness and HTTP gateway"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a Zipf-sampled query stream and write run artifacts.
    Bench(BenchArgs),
    /// Serve the query loop over HTTP.
    Serve(ServeArgs),
    /// Generate a synthetic evaluation corpus (JSONL).
    GenCorpus(GenCorpusArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Threshold,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Memboost,
    OracleOnly,
    McOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Scripted,
    Remote,
}

/// Decision-loop knobs shared by `bench` and `serve`.
#[derive(Debug, Args)]
struct ControlArgs {
    /// Similarity threshold for memory reuse.
    #[arg(long, env = "GATEWAY_TAU", default_value_t = 0.95)]
    tau: f32,
    /// Retrieval depth.
    #[arg(long = "topk", env = "GATEWAY_TOPK", default_value_t = 3)]
    topk: usize,
    /// Decision policy.
    #[arg(long, env = "GATEWAY_POLICY", value_enum, default_value_t = PolicyArg::Threshold)]
    policy: PolicyArg,
    /// Cosine above which a write-back is suppressed as a duplicate.
    #[arg(long, env = "GATEWAY_DUP_THRESHOLD", default_value_t = 0.999)]
    dup_threshold: f32,
    /// Disable write-backs entirely (memory never grows).
    #[arg(long, env = "GATEWAY_NO_WRITE_BACK")]
    no_write_back: bool,
}

/// Backend selection shared by `bench` and `serve`.
#[derive(Debug, Args)]
struct BackendArgs {
    #[arg(long, env = "GATEWAY_BACKEND", value_enum, default_value_t = BackendArg::Scripted)]
    backend: BackendArg,
    /// Chat-completions base URL for the meta-controller (remote backend).
    #[arg(long, env = "GATEWAY_MC_URL")]
    mc_url: Option<String>,
    /// Chat-completions base URL for the oracle (remote backend).
    #[arg(long, env = "GATEWAY_ORACLE_URL")]
    oracle_url: Option<String>,
    /// Embedding endpoint URL; omit for the local deterministic embedder.
    #[arg(long, env = "GATEWAY_EMBED_URL")]
    embed_url: Option<String>,
    #[arg(long, env = "GATEWAY_MC_MODEL", default_value = "default")]
    mc_model: String,
    #[arg(long, env = "GATEWAY_ORACLE_MODEL", default_value = "default")]
    oracle_model: String,
    /// Embedding model name (remote embedder).
    #[arg(long, env = "GATEWAY_EMBED_MODEL", default_value = DEFAULT_REMOTE_EMBED_MODEL)]
    embed_model: String,
    /// Embedding dimension; defaults to 256 locally, 384 remotely.
    #[arg(long, env = "GATEWAY_EMBED_DIM")]
    embed_dim: Option<usize>,
    /// Scripted-oracle accuracy rate.
    #[arg(long, env = "GATEWAY_ORACLE_ACCURACY", default_value_t = 1.0)]
    oracle_accuracy: f64,
    /// Scripted-MC accuracy rate.
    #[arg(long, env = "GATEWAY_MC_ACCURACY", default_value_t = 1.0)]
    mc_accuracy: f64,
    /// Modeled scripted-oracle latency in seconds.
    #[arg(long, env = "GATEWAY_ORACLE_LATENCY", default_value_t = 0.20)]
    oracle_latency: f64,
    /// Modeled scripted-MC latency in seconds.
    #[arg(long, env = "GATEWAY_MC_LATENCY", default_value_t = 0.05)]
    mc_latency: f64,
    /// Modeled controller overhead per query in seconds.
    #[arg(long, env = "GATEWAY_OVERHEAD_LATENCY", default_value_t = 0.01)]
    overhead_latency: f64,
    /// Seed for scripted backends (oracle uses it; MC uses it + 1).
    #[arg(long, env = "GATEWAY_SCRIPTED_SEED", default_value_t = 0)]
    scripted_seed: u64,
    /// Few-shot exemplar file prefixed to oracle prompts (`---` separated).
    #[arg(long, env = "GATEWAY_EXEMPLARS")]
    exemplars: Option<PathBuf>,
    /// Directory overriding the built-in prompt templates.
    #[arg(long, env = "GATEWAY_PROMPTS_DIR")]
    prompts_dir: Option<PathBuf>,
}

/// Cost-model parameters shared by `bench` and `serve`.
#[derive(Debug, Args)]
struct CostArgs {
    /// Per-step meta-controller cost.
    #[arg(long, env = "GATEWAY_CM", default_value_t = 0.01)]
    cm: f64,
    /// Per-step retrieval cost.
    #[arg(long, env = "GATEWAY_CR", default_value_t = 0.02)]
    cr: f64,
    /// Per-escalation oracle cost.
    #[arg(long, env = "GATEWAY_CO", default_value_t = 1.0)]
    co: f64,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Corpus JSONL path.
    #[arg(long, env = "GATEWAY_CORPUS")]
    corpus: PathBuf,
    /// Zipf exponent.
    #[arg(long, env = "GATEWAY_ALPHA", default_value_t = 1.1)]
    alpha: f64,
    /// Stream length (number of requests).
    #[arg(long, env = "GATEWAY_N", default_value_t = 5000)]
    n: u64,
    /// Workload seed.
    #[arg(long, env = "GATEWAY_SEED", default_value_t = 1)]
    seed: u64,
    /// Cap on corpus records read.
    #[arg(long, env = "GATEWAY_CORPUS_LIMIT")]
    corpus_limit: Option<usize>,
    /// Run mode.
    #[arg(long, env = "GATEWAY_MODE", value_enum, default_value_t = ModeArg::Memboost)]
    mode: ModeArg,
    /// Output directory for steplog.jsonl, summary.json, and the CSVs.
    #[arg(long, env = "GATEWAY_OUT")]
    out: PathBuf,
    #[command(flatten)]
    control: ControlArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    costs: CostArgs,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Listen address.
    #[arg(long, env = "GATEWAY_LISTEN", default_value = "127.0.0.1:8087")]
    listen: SocketAddr,
    /// Memory snapshot: loaded at startup when present, written at
    /// shutdown.
    #[arg(long, env = "GATEWAY_SNAPSHOT")]
    snapshot: Option<PathBuf>,
    /// Corpus JSONL providing gold labels by qid (enables /stats accuracy
    /// and scripted gold hints).
    #[arg(long, env = "GATEWAY_CORPUS")]
    corpus: Option<PathBuf>,
    #[arg(long, env = "GATEWAY_CORPUS_LIMIT")]
    corpus_limit: Option<usize>,
    #[command(flatten)]
    control: ControlArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    costs: CostArgs,
}

#[derive(Debug, Args)]
struct GenCorpusArgs {
    /// Number of records.
    #[arg(long, default_value_t = 768)]
    n: usize,
    /// Generation seed.
    #[arg(long, default_value_t = 41)]
    seed: u64,
    /// Output JSONL path.
    #[arg(long)]
    out: PathBuf,
}

fn build_spec(
    control: &ControlArgs,
    backend: &BackendArgs,
    costs: &CostArgs,
    snapshot: Option<PathBuf>,
) -> anyhow::Result<ControllerSpec> {
    let backend_spec = match backend.backend {
        BackendArg::Scripted => BackendSpec::scripted(
            backend.scripted_seed,
            backend.oracle_accuracy,
            backend.oracle_latency,
            backend.mc_accuracy,
            backend.mc_latency,
        ),
        BackendArg::Remote => {
            let mc_url = backend
                .mc_url
                .as_ref()
                .context("--mc-url is required with --backend remote")?;
            let oracle_url = backend
                .oracle_url
                .as_ref()
                .context("--oracle-url is required with --backend remote")?;
            BackendSpec::Remote {
                mc: ModelEndpointConfig::new(mc_url, &backend.mc_model, ModelRole::Mc),
                oracle: ModelEndpointConfig::new(oracle_url, &backend.oracle_model, ModelRole::Oracle),
            }
        }
    };

    let mut embedder = match &backend.embed_url {
        Some(url) => {
            let mut config = EmbedderConfig::remote(url);
            config.model_name = backend.embed_model.clone();
            config
        }
        None => EmbedderConfig::local_default(),
    };
    if let Some(dim) = backend.embed_dim {
        embedder.dim = dim;
    }

    Ok(ControllerSpec {
        embedder,
        ame: AmeConfig {
            top_k: control.topk,
            dup_threshold: control.dup_threshold,
            ..AmeConfig::default()
        },
        controller: ControllerConfig {
            tau: control.tau,
            top_k: control.topk,
            policy: match control.policy {
                PolicyArg::Threshold => Policy::Threshold,
                PolicyArg::Llm => Policy::Llm,
            },
            write_back_enabled: !control.no_write_back,
        },
        costs: CostParams { c_m: costs.cm, c_r: costs.cr, c_o: costs.co },
        backend: backend_spec,
        overhead_latency_seconds: backend.overhead_latency,
        prompts_dir: backend.prompts_dir.clone(),
        exemplars_path: backend.exemplars.clone(),
        snapshot_path: snapshot,
    })
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();

    match Cli::parse().command {
        Command::Bench(args) => {
            let config = BenchmarkConfig {
                corpus_path: args.corpus.clone(),
                corpus_limit: args.corpus_limit,
                workload: WorkloadConfig {
                    alpha: args.alpha,
                    num_requests: args.n,
                    seed: args.seed,
                    corpus_size_limit: None,
                },
                run_mode: match args.mode {
                    ModeArg::Memboost => RunMode::Memboost,
                    ModeArg::OracleOnly => RunMode::OracleOnly,
                    ModeArg::McOnly => RunMode::McOnly,
                },
                out_dir: args.out.clone(),
                spec: build_spec(&args.control, &args.backend, &args.costs, None)?,
            };
            let artifacts = run_benchmark(&config)?;
            let s = &artifacts.summary;
            println!(
                "{} steps | accuracy {:.4} | total cost {:.2} (oracle-only {:.2}) | \
                 {} memory hits, {} escalations, {} write-backs | savings {}",
                s.num_steps,
                s.accuracy,
                s.total_cost,
                s.oracle_only_cost,
                s.memory_hit_count,
                s.oracle_call_count,
                s.write_back_count,
                if s.savings_holds { "hold" } else { "do not hold" },
            );
            println!("artifacts in {}", config.out_dir.display());
        }
        Command::Serve(args) => {
            let spec = build_spec(&args.control, &args.backend, &args.costs, args.snapshot.clone())?;
            http::serve(GatewayConfig {
                listen: args.listen,
                corpus_path: args.corpus.clone(),
                corpus_limit: args.corpus_limit,
                spec,
            })?;
        }
        Command::GenCorpus(args) => {
            let records = generate_corpus(args.n, args.seed);
            let written = write_corpus_jsonl(&records, &args.out)
                .with_context(|| format!("writing {}", args.out.display()))?;
            println!("wrote {written} records to {}", args.out.display());
        }
    }
    Ok(())
}
