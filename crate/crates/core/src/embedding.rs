//! Unit-norm text embeddings and cosine similarity.
//!
//! Two interchangeable backends produce vectors for memory keys and lookups:
//!
//! * **Local deterministic** — character 3-gram hashing into `dim` buckets
//!   with ±1 contributions chosen by hash parity, then L2 normalization.
//!   Pure, portable, and input-stable, it yields near-1 cosine only for
//!   near-identical texts, which is exactly the regime the memory layer is
//!   tuned for (recognizing re-asked questions, not paraphrases).
//! * **Remote** — an HTTP call to any server speaking the de-facto
//!   embeddings REST shape: `POST endpoint_url` with
//!   `{"model": ..., "input": [text]}` returning
//!   `{"data": [{"embedding": [...]}]}`.
//!
//! Keys embed the query text only (answers are stored but not embedded; a
//! concatenated question+answer key is a conceivable variant, deliberately
//! not implemented). All vectors are forced to unit norm on construction so
//! cosine reduces to a dot product everywhere downstream.

use serde::{Deserialize, Serialize};

use crate::rng::fnv1a64;

/// Default dimension of the local deterministic embedder.
pub const LOCAL_EMBEDDING_DIM: usize = 256;
/// Default dimension in remote mode (a sentence-transformer MiniLM head).
pub const REMOTE_EMBEDDING_DIM: usize = 384;
/// Default remote embedding model name.
pub const DEFAULT_REMOTE_EMBED_MODEL: &str = "all-MiniLM-L6-v2";

/// Errors from embedding construction and the embedding backends.
#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("cannot embed empty or whitespace-only text")]
    EmptyText,
    #[error("embedding vector must be non-empty")]
    EmptyVector,
    #[error("embedding vector contains a non-finite component")]
    NonFinite,
    #[error("embedding vector has zero norm")]
    ZeroNorm,
    #[error("vector is not unit-norm (|v| = {norm})")]
    NotUnitNorm { norm: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid embedder config: {0}")]
    InvalidConfig(String),
    #[error("embedding request failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("embedding endpoint returned HTTP {status}")]
    HttpStatus { status: u16 },
    #[error("malformed embedding response: {0}")]
    MalformedResponse(String),
}

/// A unit-norm embedding vector.
///
/// The invariant `|v| = 1 ± 1e-6` is established at construction and never
/// broken afterwards; both constructors reject empty, non-finite, or
/// zero-norm input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    /// Normalize `values` to unit length (accumulating in f64) and wrap.
    pub fn new(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        let norm = Self::check_components(&values)?;
        if norm == 0.0 {
            return Err(EmbeddingError::ZeroNorm);
        }
        let values = values.into_iter().map(|v| (v as f64 / norm) as f32).collect();
        Ok(Self { values })
    }

    /// Wrap values that are *already* unit-norm, verbatim — no renormalizing.
    ///
    /// This is the snapshot-loading path: re-normalizing would perturb bits
    /// and make a loaded store retrieve differently from the one that wrote
    /// it. The tolerance (1e-4) is loose enough for hand-edited files while
    /// still catching un-normalized data.
    pub fn from_unit(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        let norm = Self::check_components(&values)?;
        if (norm - 1.0).abs() > 1e-4 {
            return Err(EmbeddingError::NotUnitNorm { norm });
        }
        Ok(Self { values })
    }

    fn check_components(values: &[f32]) -> Result<f64, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::EmptyVector);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        let sum_sq: f64 = values.iter().map(|&v| (v as f64) * (v as f64)).sum();
        Ok(sum_sq.sqrt())
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Dot product of two equal-length f32 slices, accumulated left to right in
/// f64. Shared by [`cosine`] and the memory-store scan kernels so every code
/// path scores identically, bit for bit.
pub(crate) fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0_f64;
    for (&x, &y) in a.iter().zip(b) {
        acc += x as f64 * y as f64;
    }
    acc
}

/// Cosine similarity of two unit-norm vectors: their dot product, summed
/// left to right in f64 and rounded once to f32. Symmetric bit for bit.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f32, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(dot_f64(a.values(), b.values()) as f32)
}

/// Which embedding backend to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderMode {
    LocalDeterministic,
    Remote,
}

/// Embedder configuration. Build with [`EmbedderConfig::local_default`] or
/// [`EmbedderConfig::remote`] and adjust fields as needed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub mode: EmbedderMode,
    /// Vector dimension; remote responses are checked against it.
    pub dim: usize,
    /// Full endpoint URL in remote mode (the request POSTs to it verbatim).
    pub endpoint_url: Option<String>,
    /// Model name sent in remote requests.
    pub model_name: String,
    /// Per-request timeout in remote mode.
    pub timeout_seconds: f64,
    /// Extra attempts after a retryable failure (timeout, connection error,
    /// HTTP 5xx) in remote mode.
    pub max_retries: u32,
    /// Base of the exponential backoff between remote retries.
    pub retry_backoff_seconds: f64,
}

impl EmbedderConfig {
    /// Local deterministic embedder at its default dimension.
    pub fn local_default() -> Self {
        Self {
            mode: EmbedderMode::LocalDeterministic,
            dim: LOCAL_EMBEDDING_DIM,
            endpoint_url: None,
            model_name: "local-trigram".into(),
            timeout_seconds: 30.0,
            max_retries: 2,
            retry_backoff_seconds: 0.5,
        }
    }

    /// Remote embedder against `endpoint_url` with the default model and
    /// dimension.
    pub fn remote(endpoint_url: impl Into<String>) -> Self {
        Self {
            mode: EmbedderMode::Remote,
            dim: REMOTE_EMBEDDING_DIM,
            endpoint_url: Some(endpoint_url.into()),
            model_name: DEFAULT_REMOTE_EMBED_MODEL.into(),
            timeout_seconds: 30.0,
            max_retries: 2,
            retry_backoff_seconds: 0.5,
        }
    }

    fn validate(&self) -> Result<(), EmbeddingError> {
        if self.dim == 0 {
            return Err(EmbeddingError::InvalidConfig("dim must be at least 1".into()));
        }
        if self.mode == EmbedderMode::Remote && self.endpoint_url.is_none() {
            return Err(EmbeddingError::InvalidConfig(
                "remote mode requires endpoint_url".into(),
            ));
        }
        if !(self.timeout_seconds > 0.0) {
            return Err(EmbeddingError::InvalidConfig(
                "timeout_seconds must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: [&'a str; 1],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f32>,
}

/// Text-to-vector frontend over the configured backend. Stateless per call;
/// safe to share across threads.
pub struct Embedder {
    config: EmbedderConfig,
    client: Option<reqwest::blocking::Client>,
}

impl Embedder {
    pub fn new(config: EmbedderConfig) -> Result<Self, EmbeddingError> {
        config.validate()?;
        let client = match config.mode {
            EmbedderMode::LocalDeterministic => None,
            EmbedderMode::Remote => Some(
                reqwest::blocking::Client::builder()
                    .timeout(std::time::Duration::from_secs_f64(config.timeout_seconds))
                    .build()
                    .map_err(|e| EmbeddingError::InvalidConfig(e.to_string()))?,
            ),
        };
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.config
    }

    /// Embed `text` (trimmed). Whitespace-only input is rejected.
    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        match self.config.mode {
            EmbedderMode::LocalDeterministic => local_embed(trimmed, self.config.dim),
            EmbedderMode::Remote => self.remote_embed(trimmed),
        }
    }

    /// One connectivity probe against the remote endpoint (no-op locally).
    pub fn health_check(&self) -> Result<(), EmbeddingError> {
        if self.config.mode == EmbedderMode::Remote {
            self.embed("health check")?;
        }
        Ok(())
    }

    fn remote_embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let client = self.client.as_ref().expect("remote mode builds a client");
        let url = self
            .config
            .endpoint_url
            .as_ref()
            .expect("validated: remote mode has endpoint_url");
        let body = EmbedRequest {
            model: &self.config.model_name,
            input: [text],
        };

        let attempts = self.config.max_retries + 1;
        let mut last_message = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff = self.config.retry_backoff_seconds * (1 << (attempt - 1)) as f64;
                std::thread::sleep(std::time::Duration::from_secs_f64(backoff));
            }
            match client.post(url).json(&body).send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_server_error() {
                        last_message = format!("HTTP {}", status.as_u16());
                        continue; // retryable
                    }
                    if !status.is_success() {
                        return Err(EmbeddingError::HttpStatus {
                            status: status.as_u16(),
                        });
                    }
                    let parsed: EmbedResponse = resp
                        .json()
                        .map_err(|e| EmbeddingError::MalformedResponse(e.to_string()))?;
                    let datum = parsed
                        .data
                        .into_iter()
                        .next()
                        .ok_or_else(|| EmbeddingError::MalformedResponse("empty data array".into()))?;
                    if datum.embedding.len() != self.config.dim {
                        return Err(EmbeddingError::DimensionMismatch {
                            expected: self.config.dim,
                            got: datum.embedding.len(),
                        });
                    }
                    return EmbeddingVector::new(datum.embedding);
                }
                Err(e) => {
                    last_message = e.to_string();
                }
            }
        }
        Err(EmbeddingError::Transport {
            attempts,
            message: last_message,
        })
    }
}

// ── Local deterministic embedder ─────────────────────────────────────────

/// Hash seed separating ordinary 3-grams from the whole-text sentinel gram.
const GRAM_TAG: u8 = 0x67; // 'g'
const SENTINEL_TAG: u8 = 0x73; // 's'

/// Incremental FNV-1a over a domain tag plus UTF-8 char data, so grams hash
/// without per-gram allocation.
fn hash_gram(tag: u8, chars: &[char]) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = fnv1a64(&[tag]);
    let mut buf = [0u8; 4];
    for &c in chars {
        for &b in c.encode_utf8(&mut buf).as_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
    }
    h
}

/// Character 3-gram hashing embedder.
///
/// Every 3-char window (the whole text, if shorter) hashes to a bucket
/// `h mod dim` and contributes ±1 by the parity of bit 32 of the hash; one
/// extra whole-text sentinel gram guarantees a nonzero accumulator even
/// under pathological sign cancellation. The bucket histogram is then
/// L2-normalized. Pure and allocation-light; identical input always yields
/// the identical vector.
fn local_embed(trimmed: &str, dim: usize) -> Result<EmbeddingVector, EmbeddingError> {
    let chars: Vec<char> = trimmed.chars().collect();
    let mut acc = vec![0.0_f32; dim];

    let mut add = |h: u64| {
        let bucket = (h % dim as u64) as usize;
        let sign = if (h >> 32) & 1 == 1 { 1.0 } else { -1.0 };
        acc[bucket] += sign;
    };

    if chars.len() < 3 {
        add(hash_gram(GRAM_TAG, &chars));
    } else {
        for window in chars.windows(3) {
            add(hash_gram(GRAM_TAG, window));
        }
    }
    add(hash_gram(SENTINEL_TAG, &chars));

    match EmbeddingVector::new(acc) {
        Ok(v) => Ok(v),
        // Total cancellation is possible only if some 3-gram lands in the
        // sentinel's bucket with the opposite sign and everything else also
        // cancels; fall back to the bare sentinel so the function stays
        // total and deterministic.
        Err(EmbeddingError::ZeroNorm) => {
            let mut acc = vec![0.0_f32; dim];
            let h = hash_gram(SENTINEL_TAG, &chars);
            acc[(h % dim as u64) as usize] = 1.0;
            EmbeddingVector::new(acc)
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_corpus;
    use proptest::prelude::*;

    fn local() -> Embedder {
        Embedder::new(EmbedderConfig::local_default()).unwrap()
    }

    fn norm(v: &EmbeddingVector) -> f64 {
        v.values().iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
    }

    #[test]
    fn local_embedding_is_deterministic_and_unit_norm() {
        let e = local();
        let a = e.embed("abc").unwrap();
        let b = e.embed("abc").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), LOCAL_EMBEDDING_DIM);
        assert!((norm(&a) - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn identical_text_has_cosine_one_and_distinct_text_less() {
        let e = local();
        let gdp1 = e.embed("What is GDP?").unwrap();
        let gdp2 = e.embed("What is GDP?").unwrap();
        let entropy = e.embed("Define entropy.").unwrap();
        assert!((cosine(&gdp1, &gdp2).unwrap() - 1.0).abs() <= 1e-6);
        // Verified empirically for this pair before freezing the assertion:
        // the two texts share no 3-gram, so the similarity is far below 1.
        assert!(cosine(&gdp1, &entropy).unwrap() < 1.0);
        assert!(cosine(&gdp1, &entropy).unwrap() < 0.5);
    }

    #[test]
    fn short_texts_embed_without_panic() {
        let e = local();
        for text in ["a", "ab", "数", "  x  "] {
            let v = e.embed(text).unwrap();
            assert!((norm(&v) - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn whitespace_only_text_is_rejected() {
        let e = local();
        assert!(matches!(e.embed(""), Err(EmbeddingError::EmptyText)));
        assert!(matches!(e.embed("   \t\n"), Err(EmbeddingError::EmptyText)));
    }

    #[test]
    fn leading_and_trailing_whitespace_is_ignored() {
        let e = local();
        assert_eq!(e.embed("hello world").unwrap(), e.embed("  hello world \n").unwrap());
    }

    #[test]
    fn embedder_is_injective_in_practice_on_a_thousand_texts() {
        // "Distinct questions never look identical": over a 1,000-text
        // sample, no pair reaches the duplicate-suppression line (0.999).
        let e = local();
        let corpus = generate_corpus(1_000, 11);
        let vectors: Vec<_> = corpus.iter().map(|r| e.embed(&r.question).unwrap()).collect();
        let mut max_sim = f32::MIN;
        for i in 0..vectors.len() {
            for j in (i + 1)..vectors.len() {
                max_sim = max_sim.max(cosine(&vectors[i], &vectors[j]).unwrap());
            }
        }
        assert!(max_sim < 0.999, "closest distinct pair: {max_sim}");
    }

    #[test]
    fn cosine_rejects_dimension_mismatch() {
        let a = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let b = EmbeddingVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            cosine(&a, &b),
            Err(EmbeddingError::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn cosine_matches_hand_computation() {
        // (0.6, 0.8) · (0.8, 0.6) = 0.96, both already unit vectors.
        let a = EmbeddingVector::new(vec![0.6, 0.8]).unwrap();
        let b = EmbeddingVector::new(vec![0.8, 0.6]).unwrap();
        assert!((cosine(&a, &b).unwrap() - 0.96).abs() < 1e-7);
        // Orthogonal and antipodal checks.
        let x = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let y = EmbeddingVector::new(vec![0.0, 1.0]).unwrap();
        let neg_x = EmbeddingVector::new(vec![-1.0, 0.0]).unwrap();
        assert_eq!(cosine(&x, &y).unwrap(), 0.0);
        assert_eq!(cosine(&x, &neg_x).unwrap(), -1.0);
    }

    #[test]
    fn vector_constructors_enforce_invariants() {
        assert!(matches!(
            EmbeddingVector::new(vec![]),
            Err(EmbeddingError::EmptyVector)
        ));
        assert!(matches!(
            EmbeddingVector::new(vec![0.0, 0.0]),
            Err(EmbeddingError::ZeroNorm)
        ));
        assert!(matches!(
            EmbeddingVector::new(vec![f32::NAN, 1.0]),
            Err(EmbeddingError::NonFinite)
        ));
        assert!(matches!(
            EmbeddingVector::from_unit(vec![3.0, 4.0]),
            Err(EmbeddingError::NotUnitNorm { .. })
        ));
        // from_unit must keep bits verbatim.
        let v = EmbeddingVector::new(vec![3.0, 4.0]).unwrap();
        let kept = EmbeddingVector::from_unit(v.values().to_vec()).unwrap();
        assert_eq!(kept, v);
    }

    proptest! {
        #[test]
        fn normalization_yields_unit_norm(values in proptest::collection::vec(-100.0f32..100.0, 1..64)) {
            prop_assume!(values.iter().any(|&v| v != 0.0));
            let v = EmbeddingVector::new(values).unwrap();
            prop_assert!((norm(&v) - 1.0).abs() <= 1e-6);
        }

        #[test]
        fn cosine_is_bitwise_symmetric_and_bounded(
            a in proptest::collection::vec(-10.0f32..10.0, 32),
            b in proptest::collection::vec(-10.0f32..10.0, 32),
        ) {
            prop_assume!(a.iter().any(|&v| v != 0.0) && b.iter().any(|&v| v != 0.0));
            let va = EmbeddingVector::new(a).unwrap();
            let vb = EmbeddingVector::new(b).unwrap();
            let ab = cosine(&va, &vb).unwrap();
            let ba = cosine(&vb, &va).unwrap();
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
            prop_assert!((-1.0 - 1e-6..=1.0 + 1e-6).contains(&(ab as f64)));
        }

        #[test]
        fn local_embedding_of_arbitrary_text_is_unit_norm(text in "\\PC{1,120}") {
            prop_assume!(!text.trim().is_empty());
            let v = local().embed(&text).unwrap();
            prop_assert!((norm(&v) - 1.0).abs() <= 1e-6);
        }
    }
}
