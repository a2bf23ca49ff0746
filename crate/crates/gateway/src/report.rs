//! Plot-ready artifact files for one finished run.
//!
//! `summary.json` is the single aggregate document; `memrate.csv` and
//! `latency.csv` carry the two windowed series as `(t, value)` rows with
//! stable headers, ready for direct plotting.

use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;

use memboost_core::metrics::RunSummary;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub summary_path: PathBuf,
    pub memrate_path: PathBuf,
    pub latency_path: PathBuf,
}

/// Write `summary.json`, `memrate.csv`, and `latency.csv` into `out_dir`.
pub fn emit_report(summary: &RunSummary, out_dir: &Path) -> anyhow::Result<ReportPaths> {
    let paths = ReportPaths {
        summary_path: out_dir.join("summary.json"),
        memrate_path: out_dir.join("memrate.csv"),
        latency_path: out_dir.join("latency.csv"),
    };

    let json = serde_json::to_string_pretty(summary).context("serializing summary")?;
    std::fs::write(&paths.summary_path, json + "\n")
        .with_context(|| format!("writing {}", paths.summary_path.display()))?;

    write_series(&paths.memrate_path, "t,memory_rate", &summary.memory_rate_series)?;
    write_series(&paths.latency_path, "t,latency_seconds", &summary.latency_series)?;
    Ok(paths)
}

/// Two-column CSV: a header row, then one row per series point. An empty
/// series leaves a header-only file.
fn write_series<V: Display>(path: &Path, header: &str, series: &[(u64, V)]) -> anyhow::Result<()> {
    let file = std::fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "{header}")?;
    for (t, value) in series {
        writeln!(w, "{t},{value}")?;
    }
    w.flush()
        .with_context(|| format!("flushing {}", path.display()))
}
