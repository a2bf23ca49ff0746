//! Corpus loading and Zipf-distributed request stream synthesis.
//!
//! A benchmark run replays a stream of multiple-choice questions drawn from a
//! fixed corpus with a Zipf popularity profile: a few questions recur often,
//! most appear rarely. That skew is what makes answer reuse pay off, so the
//! sampler here is the foundation the rest of the harness is measured on.
//! Everything is deterministic in `(corpus, WorkloadConfig)`: the popularity
//! ranks come from one seeded shuffle and the draws from one seeded
//! inverse-CDF stream, so two runs with the same inputs replay the same
//! requests bit for bit.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::rng::SubstreamRng;

/// Largest multiple-choice option set we accept: labels `A` through `J`.
pub const MAX_OPTIONS: usize = 10;

/// Errors from corpus loading and stream sampling.
#[derive(Debug, thiserror::Error)]
pub enum WorkloadError {
    #[error("failed to read corpus {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("corpus {path} line {line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate qid \"{qid}\" in corpus: first at line {first_line}, again at line {second_line}")]
    DuplicateQid {
        qid: String,
        first_line: usize,
        second_line: usize,
    },
    #[error("corpus {path} contains no records")]
    EmptyCorpus { path: PathBuf },
    #[error("invalid zipf parameters: n = {n}, alpha = {alpha} (need n >= 1 and alpha > 0)")]
    ZipfParams { n: usize, alpha: f64 },
    #[error("cannot sample from an empty working set")]
    EmptyWorkingSet,
    #[error("num_requests must be at least 1")]
    ZeroRequests,
}

/// Answer label for a multiple-choice question: `A` through `J`, stored as a
/// zero-based option index. Serialized as the single-letter string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AnswerLabel(u8);

impl AnswerLabel {
    /// Build from a zero-based option index. Returns `None` past `J`.
    pub fn from_index(index: usize) -> Option<Self> {
        (index < MAX_OPTIONS).then(|| Self(index as u8))
    }

    /// Build from an uppercase letter `A`..=`J`.
    pub fn from_char(c: char) -> Option<Self> {
        if ('A'..='J').contains(&c) {
            Some(Self(c as u8 - b'A'))
        } else {
            None
        }
    }

    /// Parse a single-letter label string such as `"C"`.
    pub fn parse(s: &str) -> Option<Self> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Self::from_char(c),
            _ => None,
        }
    }

    /// Zero-based option index.
    pub fn index(self) -> usize {
        usize::from(self.0)
    }

    /// The uppercase letter form.
    pub fn as_char(self) -> char {
        (b'A' + self.0) as char
    }
}

impl fmt::Display for AnswerLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl Serialize for AnswerLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.as_char().to_string())
    }
}

impl<'de> Deserialize<'de> for AnswerLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        AnswerLabel::parse(&s)
            .ok_or_else(|| D::Error::custom(format!("gold_label must be a letter A..J, got \"{s}\"")))
    }
}

/// One multiple-choice question from the evaluation corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    /// Stable unique identifier.
    pub qid: String,
    /// Question text.
    pub question: String,
    /// Candidate answers; position 0 is label `A`.
    pub options: Vec<String>,
    /// Correct option.
    pub gold_label: AnswerLabel,
    /// Topic tag (informational; carried through to memory entries).
    pub category: String,
}

impl QueryRecord {
    /// Validate internal consistency. Returns a message describing the first
    /// problem found, if any.
    fn check(&self) -> Result<(), String> {
        if self.qid.trim().is_empty() {
            return Err("qid must be non-empty".into());
        }
        if self.question.trim().is_empty() {
            return Err("question must be non-empty".into());
        }
        if self.options.is_empty() {
            return Err("options must be non-empty".into());
        }
        if self.options.len() > MAX_OPTIONS {
            return Err(format!(
                "too many options: {} (maximum {MAX_OPTIONS})",
                self.options.len()
            ));
        }
        if self.gold_label.index() >= self.options.len() {
            return Err(format!(
                "gold_label {} is out of range for {} options",
                self.gold_label,
                self.options.len()
            ));
        }
        Ok(())
    }
}

/// Load a JSONL corpus. Each non-blank line is one [`QueryRecord`].
///
/// With `limit = Some(n)`, reading stops once `n` records have been
/// collected; records keep file order. Blank lines are skipped. Duplicate
/// `qid`s, malformed lines, and out-of-range labels are hard errors with
/// line numbers, because a corpus defect silently skews every downstream
/// popularity measurement.
pub fn load_corpus(path: &Path, limit: Option<usize>) -> Result<Vec<QueryRecord>, WorkloadError> {
    let file = File::open(path).map_err(|source| WorkloadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);

    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        if let Some(limit) = limit {
            if records.len() >= limit {
                break;
            }
        }
        let line_no = idx + 1;
        let line = line.map_err(|source| WorkloadError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: QueryRecord =
            serde_json::from_str(&line).map_err(|e| WorkloadError::Malformed {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
        record.check().map_err(|message| WorkloadError::Malformed {
            path: path.to_path_buf(),
            line: line_no,
            message,
        })?;
        if let Some(&first_line) = seen.get(&record.qid) {
            return Err(WorkloadError::DuplicateQid {
                qid: record.qid,
                first_line,
                second_line: line_no,
            });
        }
        seen.insert(record.qid.clone(), line_no);
        records.push(record);
    }

    if records.is_empty() {
        return Err(WorkloadError::EmptyCorpus {
            path: path.to_path_buf(),
        });
    }
    Ok(records)
}

/// Parameters of one synthetic request stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    /// Zipf skew exponent; larger means more repetition. Must be > 0.
    pub alpha: f64,
    /// Stream length T.
    pub num_requests: u64,
    /// Seed for both the rank shuffle and the draws.
    pub seed: u64,
    /// Optional cap on how many corpus records participate.
    pub corpus_size_limit: Option<usize>,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            alpha: 1.1,
            num_requests: 5_000,
            seed: 1,
            corpus_size_limit: None,
        }
    }
}

/// One position in the request stream. Steps are 1-based and consecutive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryEvent<'a> {
    pub t: u64,
    pub record: &'a QueryRecord,
}

/// Zipf probabilities over ranks `1..=n`: `p(k) ∝ k^-alpha`, normalized to
/// sum to 1 (within accumulated rounding, at most a few ULPs).
pub fn zipf_probabilities(n: usize, alpha: f64) -> Result<Vec<f64>, WorkloadError> {
    if n == 0 || !(alpha > 0.0) {
        return Err(WorkloadError::ZipfParams { n, alpha });
    }
    let mut probs: Vec<f64> = (1..=n).map(|k| (k as f64).powf(-alpha)).collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    Ok(probs)
}

/// The deterministic structure behind a stream: rank probabilities plus the
/// seeded assignment of ranks to working-set indices. Exposed so analyses
/// (e.g. distribution-fit tests) can relate observed per-record frequencies
/// back to their nominal rank probabilities.
#[derive(Debug, Clone)]
pub struct StreamSpec {
    /// `probabilities[r]` is the probability of rank `r` (0-based rank index).
    pub probabilities: Vec<f64>,
    /// `rank_to_record[r]` is the working-set index holding rank `r`.
    pub rank_to_record: Vec<usize>,
}

impl StreamSpec {
    /// Working-set size.
    pub fn len(&self) -> usize {
        self.rank_to_record.len()
    }

    /// True when the working set is empty (never for a built spec).
    pub fn is_empty(&self) -> bool {
        self.rank_to_record.is_empty()
    }
}

/// Build the rank assignment and probabilities for `corpus_len` records
/// under `config`, without drawing the stream itself.
pub fn stream_spec(corpus_len: usize, config: &WorkloadConfig) -> Result<StreamSpec, WorkloadError> {
    let m = match config.corpus_size_limit {
        Some(limit) => corpus_len.min(limit),
        None => corpus_len,
    };
    if m == 0 {
        return Err(WorkloadError::EmptyWorkingSet);
    }
    let probabilities = zipf_probabilities(m, config.alpha)?;
    let mut rank_to_record: Vec<usize> = (0..m).collect();
    SubstreamRng::new(config.seed, "zipf-rank-shuffle").shuffle(&mut rank_to_record);
    Ok(StreamSpec {
        probabilities,
        rank_to_record,
    })
}

/// Draw the full request stream: `num_requests` events over the first
/// `min(len, corpus_size_limit)` records of `corpus`.
///
/// Ranks are assigned by a seeded shuffle (substream `"zipf-rank-shuffle"`),
/// then each step draws a rank by inverse-CDF lookup on a uniform from
/// substream `"zipf-draws"`. Identical inputs produce identical streams.
pub fn sample_stream<'a>(
    corpus: &'a [QueryRecord],
    config: &WorkloadConfig,
) -> Result<Vec<QueryEvent<'a>>, WorkloadError> {
    if config.num_requests == 0 {
        return Err(WorkloadError::ZeroRequests);
    }
    let spec = stream_spec(corpus.len(), config)?;
    let m = spec.len();

    let mut cdf = Vec::with_capacity(m);
    let mut acc = 0.0_f64;
    for &p in &spec.probabilities {
        acc += p;
        cdf.push(acc);
    }

    let mut rng = SubstreamRng::new(config.seed, "zipf-draws");
    let mut events = Vec::with_capacity(config.num_requests as usize);
    for t in 1..=config.num_requests {
        let u = rng.next_f64();
        // Smallest rank whose cumulative probability exceeds u; the final
        // clamp covers u landing beyond the last partial sum (< 1 by
        // rounding).
        let rank = cdf.partition_point(|&c| c <= u).min(m - 1);
        events.push(QueryEvent {
            t,
            record: &corpus[spec.rank_to_record[rank]],
        });
    }
    Ok(events)
}
