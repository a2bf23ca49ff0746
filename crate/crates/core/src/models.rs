//! Generation backends and answer-label extraction.
//!
//! Two model roles exist at serving time: the lightweight meta-controller
//! (MC) that judges memory hits, and the large oracle that actually answers
//! escalated questions. Both speak through one trait, [`GenerationBackend`],
//! with two implementations:
//!
//! * [`HttpModelClient`] — the de-facto chat-completions REST shape
//!   (`POST {base_url}/v1/chat/completions`), compatible with vLLM-style
//!   servers. The artifact binds to the protocol, not to any server.
//! * [`ScriptedModel`] — a deterministic desk-scale stand-in: answers with a
//!   configured accuracy against the gold label, with a fixed *modeled*
//!   latency. Modeled means the figure is reported, never slept away:
//!   benchmark runs must be byte-reproducible, and measured waits are not.
//!
//! Multiple-choice scoring extracts the final "the answer is (X)" pattern
//! from generated text; the last match wins because chain-of-thought often
//! mentions candidate letters before settling.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::rng::{fnv1a64, SubstreamRng};
use crate::workload::{AnswerLabel, MAX_OPTIONS};

/// Errors from generation calls, each failure mode distinct so callers can
/// choose their fallback.
#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned HTTP {status} (after {attempts} attempt(s))")]
    HttpStatus { status: u16, attempts: u32 },
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
}

/// Which serving role a backend plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Mc,
    Oracle,
}

/// One chat message in a generation prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: "system".into(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }
}

/// Remote chat-completions endpoint configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Sampling temperature; serving runs pin it to 0.0 for stability.
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_seconds: f64,
    pub role: ModelRole,
    /// Extra attempts after a retryable failure (timeout, connect error,
    /// HTTP 5xx).
    pub max_retries: u32,
    /// Base of the exponential backoff between retries.
    pub retry_backoff_seconds: f64,
    /// Opaque extra request fields merged into the JSON body, e.g.
    /// `{"chat_template_kwargs": {"enable_thinking": false}}`. Never
    /// interpreted locally.
    pub extra_body: serde_json::Map<String, Value>,
}

impl ModelEndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>, role: ModelRole) -> Self {
        Self {
            base_url: base_url.into(),
            model_name: model_name.into(),
            temperature: 0.0,
            max_tokens: 4096,
            timeout_seconds: 120.0,
            role,
            max_retries: 2,
            retry_backoff_seconds: 0.5,
            extra_body: serde_json::Map::new(),
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.base_url.trim().is_empty() {
            return Err(ModelError::InvalidConfig("base_url must be non-empty".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(ModelError::InvalidConfig("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(ModelError::InvalidConfig("max_tokens must be >= 1".into()));
        }
        if !(self.timeout_seconds > 0.0) {
            return Err(ModelError::InvalidConfig("timeout_seconds must be positive".into()));
        }
        Ok(())
    }
}

/// One completed generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    /// Wall-clock seconds around the backend call only (prompt construction
    /// excluded), or the modeled constant for scripted backends.
    pub latency_seconds: f64,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

/// Inputs a generation call may carry beyond the prompt itself. Remote
/// backends ignore them; scripted backends use them to key determinism and
/// aim at (or away from) the gold label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedHints<'a> {
    pub qid: &'a str,
    pub gold_label: Option<AnswerLabel>,
    pub option_count: usize,
}

/// One generation request: the prompt plus optional scripted hints.
#[derive(Debug, Clone)]
pub struct GenerationRequest<'a> {
    pub messages: &'a [ChatMessage],
    pub hints: Option<ScriptedHints<'a>>,
}

/// Uniform generation interface for MC, oracle, and scripted test backends.
/// Implementations are shareable across threads and tolerate concurrent
/// in-flight calls.
pub trait GenerationBackend: Send + Sync {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<GenerationResult, ModelError>;

    /// Optional reachability probe; defaults to trivially healthy.
    fn health_check(&self) -> Result<(), ModelError> {
        Ok(())
    }

    /// Human-readable identity for logs.
    fn describe(&self) -> String;
}

// ── Remote chat-completions client ───────────────────────────────────────

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

/// Blocking HTTP client for one chat-completions endpoint.
pub struct HttpModelClient {
    config: ModelEndpointConfig,
    client: reqwest::blocking::Client,
}

impl HttpModelClient {
    pub fn new(config: ModelEndpointConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs_f64(config.timeout_seconds))
            .build()
            .map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &ModelEndpointConfig {
        &self.config
    }

    fn completions_url(&self) -> String {
        format!("{}/v1/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn request_body(&self, messages: &[ChatMessage]) -> Value {
        let mut body = json!({
            "model": self.config.model_name,
            "messages": messages,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        });
        let obj = body.as_object_mut().expect("body is an object");
        for (k, v) in &self.config.extra_body {
            obj.insert(k.clone(), v.clone());
        }
        body
    }
}

impl GenerationBackend for HttpModelClient {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<GenerationResult, ModelError> {
        let url = self.completions_url();
        let body = self.request_body(request.messages);

        let attempts = self.config.max_retries + 1;
        let mut last_err = ModelError::Transport { attempts, message: "no attempt made".into() };
        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff = self.config.retry_backoff_seconds * (1 << (attempt - 1)) as f64;
                std::thread::sleep(std::time::Duration::from_secs_f64(backoff));
            }
            // Latency brackets the network call and body read only.
            let started = Instant::now();
            let outcome = self.client.post(&url).json(&body).send();
            match outcome {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_server_error() {
                        last_err = ModelError::HttpStatus { status: status.as_u16(), attempts };
                        continue; // retryable
                    }
                    if !status.is_success() {
                        return Err(ModelError::HttpStatus {
                            status: status.as_u16(),
                            attempts: attempt + 1,
                        });
                    }
                    let bytes = resp
                        .bytes()
                        .map_err(|e| ModelError::MalformedResponse(e.to_string()))?;
                    let latency_seconds = started.elapsed().as_secs_f64();
                    let parsed: ChatResponse = serde_json::from_slice(&bytes)
                        .map_err(|e| ModelError::MalformedResponse(e.to_string()))?;
                    let text = parsed
                        .choices
                        .into_iter()
                        .next()
                        .and_then(|c| c.message.content)
                        .unwrap_or_default();
                    if text.is_empty() {
                        return Err(ModelError::EmptyCompletion);
                    }
                    let (prompt_tokens, completion_tokens) = parsed
                        .usage
                        .map(|u| (u.prompt_tokens, u.completion_tokens))
                        .unwrap_or((None, None));
                    return Ok(GenerationResult {
                        text,
                        latency_seconds,
                        prompt_tokens,
                        completion_tokens,
                    });
                }
                Err(e) => {
                    last_err = if e.is_timeout() {
                        ModelError::Timeout { attempts }
                    } else {
                        ModelError::Transport { attempts, message: e.to_string() }
                    };
                }
            }
        }
        Err(last_err)
    }

    fn health_check(&self) -> Result<(), ModelError> {
        let url = format!("{}/v1/models", self.config.base_url.trim_end_matches('/'));
        let resp = self
            .client
            .get(&url)
            .send()
            .map_err(|e| ModelError::Transport { attempts: 1, message: e.to_string() })?;
        if !resp.status().is_success() {
            return Err(ModelError::HttpStatus { status: resp.status().as_u16(), attempts: 1 });
        }
        Ok(())
    }

    fn describe(&self) -> String {
        format!("http({} @ {})", self.config.model_name, self.config.base_url)
    }
}

// ── Scripted deterministic backend ───────────────────────────────────────

/// Configuration of a scripted backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedModelConfig {
    /// Forced answers for specific qids; entries here bypass the accuracy
    /// draw entirely.
    pub answer_table: BTreeMap<String, AnswerLabel>,
    /// Probability a non-forced answer is the gold label.
    pub accuracy_rate: f64,
    /// Modeled latency reported on every call (never slept).
    pub fixed_latency_seconds: f64,
    pub seed: u64,
}

impl Default for ScriptedModelConfig {
    fn default() -> Self {
        Self {
            answer_table: BTreeMap::new(),
            accuracy_rate: 1.0,
            fixed_latency_seconds: 0.0,
            seed: 0,
        }
    }
}

impl ScriptedModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..=1.0).contains(&self.accuracy_rate) {
            return Err(ModelError::InvalidConfig("accuracy_rate must be in [0, 1]".into()));
        }
        if !(self.fixed_latency_seconds >= 0.0) {
            return Err(ModelError::InvalidConfig("fixed_latency_seconds must be >= 0".into()));
        }
        Ok(())
    }
}

/// One scripted generation, pure in its inputs.
///
/// Precedence: an `answer_table` entry for `qid` wins; otherwise with
/// probability `accuracy_rate` the gold label is emitted and with the
/// remainder a uniformly chosen *wrong* label. Without a gold label the
/// draw is uniform over all options (correctness then happens by chance).
pub fn scripted_generate(
    config: &ScriptedModelConfig,
    qid: &str,
    gold_label: Option<AnswerLabel>,
    option_count: usize,
    rng: &mut SubstreamRng,
) -> GenerationResult {
    let option_count = option_count.clamp(1, MAX_OPTIONS);
    let label = if let Some(&forced) = config.answer_table.get(qid) {
        forced
    } else {
        match gold_label {
            Some(gold) if option_count > 1 => {
                if rng.next_f64() < config.accuracy_rate {
                    gold
                } else {
                    // Uniform over the option_count - 1 wrong labels.
                    let mut idx = rng.next_index(option_count - 1);
                    if idx >= gold.index() {
                        idx += 1;
                    }
                    AnswerLabel::from_index(idx).expect("wrong-label index stays in range")
                }
            }
            Some(gold) => gold,
            None => AnswerLabel::from_index(rng.next_index(option_count))
                .expect("option_count is clamped to the label range"),
        }
    };
    GenerationResult {
        text: format!("Weighing the options against the question, {}.", render_answer(label)),
        latency_seconds: config.fixed_latency_seconds,
        prompt_tokens: None,
        completion_tokens: None,
    }
}

/// Deterministic stand-in backend.
///
/// Each (qid, call-index) pair maps to its own RNG substream of the
/// configured seed, so results depend only on how many times *that* qid has
/// been asked — never on global call interleaving. The per-qid counters sit
/// behind a mutex, which keeps concurrent callers deterministic too.
pub struct ScriptedModel {
    config: ScriptedModelConfig,
    calls: Mutex<HashMap<String, u64>>,
}

impl ScriptedModel {
    pub fn new(config: ScriptedModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Self { config, calls: Mutex::new(HashMap::new()) })
    }

    pub fn config(&self) -> &ScriptedModelConfig {
        &self.config
    }
}

impl GenerationBackend for ScriptedModel {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<GenerationResult, ModelError> {
        // Hints key the determinism; without them, fall back to a stable
        // hash of the prompt so the backend still answers.
        let (qid, gold_label, option_count) = match request.hints {
            Some(h) => (h.qid.to_string(), h.gold_label, h.option_count),
            None => {
                let mut digest = 0u64;
                for m in request.messages {
                    digest ^= fnv1a64(m.content.as_bytes()).rotate_left(17);
                }
                (format!("anon-{digest:016x}"), None, MAX_OPTIONS)
            }
        };
        let call_index = {
            let mut calls = self.calls.lock().expect("scripted call counter poisoned");
            let counter = calls.entry(qid.clone()).or_insert(0);
            let current = *counter;
            *counter += 1;
            current
        };
        let mut rng = SubstreamRng::new(
            self.config.seed,
            &format!("scripted:{qid}:{call_index}"),
        );
        Ok(scripted_generate(&self.config, &qid, gold_label, option_count, &mut rng))
    }

    fn describe(&self) -> String {
        format!(
            "scripted(seed={}, accuracy={}, latency={}s)",
            self.config.seed, self.config.accuracy_rate, self.config.fixed_latency_seconds
        )
    }
}

// ── Answer-label extraction ──────────────────────────────────────────────

/// Canonical answer sentence for label `label`; the inverse of
/// [`extract_label`].
pub fn render_answer(label: AnswerLabel) -> String {
    format!("the answer is ({})", label.as_char())
}

/// Extract the multiple-choice label from generated text.
///
/// Scans for the conventional pattern "answer is (X)" (case-insensitive
/// lead-in, optional colon/parenthesis/emphasis, capital letter) and takes
/// the **last** occurrence, since reasoning text may float earlier
/// candidates. Returns `None` when the pattern is absent or its letter is
/// out of range for `option_count`. Total and pure — absence is a value,
/// not an error.
pub fn extract_label(text: &str, option_count: usize) -> Option<AnswerLabel> {
    use std::sync::OnceLock;
    static PATTERN: OnceLock<regex::Regex> = OnceLock::new();
    let re = PATTERN.get_or_init(|| {
        // The trailing alternation forbids the captured letter from being
        // the start of a longer word ("(Apple)" must not read as A).
        regex::Regex::new(r#"(?i:answer\s+is)\s*:?\s*["'(*]*([A-J])(?:[^A-Za-z]|$)"#)
            .expect("answer pattern compiles")
    });
    let option_count = option_count.clamp(1, MAX_OPTIONS);
    let last = re.captures_iter(text).last()?;
    let letter = last.get(1).expect("pattern has one capture").as_str().chars().next()?;
    let label = AnswerLabel::from_char(letter)?;
    (label.index() < option_count).then_some(label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    // ── extract_label ────────────────────────────────────────────────────

    #[test]
    fn extracts_canonical_pattern() {
        let label = extract_label("Working through the cases, the answer is (C).", 10);
        assert_eq!(label, Some(AnswerLabel::from_char('C').unwrap()));
    }

    #[test]
    fn absent_pattern_yields_none() {
        assert_eq!(extract_label("I cannot determine.", 10), None);
        assert_eq!(extract_label("", 10), None);
        assert_eq!(extract_label("options are (A) and (B)", 10), None);
    }

    #[test]
    fn last_match_wins() {
        let text = "first (A) looks right, answer is (A)... but finally the answer is (E)";
        assert_eq!(extract_label(text, 10), Some(AnswerLabel::from_char('E').unwrap()));
    }

    #[test]
    fn out_of_range_letter_yields_none() {
        // Four options: E exists as a letter but not as an option.
        assert_eq!(extract_label("the answer is (E)", 4), None);
        // The last match governs even when an earlier one was in range.
        assert_eq!(extract_label("the answer is (A). no wait, the answer is (J)", 4), None);
    }

    #[test]
    fn tolerates_common_formatting_variants() {
        let b = AnswerLabel::from_char('B').unwrap();
        assert_eq!(extract_label("The answer is B.", 10), Some(b));
        assert_eq!(extract_label("THE ANSWER IS: (B)", 10), Some(b));
        assert_eq!(extract_label("the answer is **B**", 10), Some(b));
        assert_eq!(extract_label("the answer is (B", 10), Some(b));
        assert_eq!(extract_label("the answer is \"B\"", 10), Some(b));
    }

    #[test]
    fn letter_must_be_a_standalone_capital() {
        assert_eq!(extract_label("the answer is (Apple)", 10), None);
        assert_eq!(extract_label("the answer is (d)", 10), None);
    }

    #[test]
    fn every_label_round_trips_through_render() {
        for i in 0..MAX_OPTIONS {
            let label = AnswerLabel::from_index(i).unwrap();
            assert_eq!(extract_label(&render_answer(label), 10), Some(label));
            let sentence = format!("Weighing the options, {}.", render_answer(label));
            assert_eq!(extract_label(&sentence, 10), Some(label));
        }
    }

    // ── scripted backend ─────────────────────────────────────────────────

    fn hints(qid: &str, gold: char, options: usize) -> ScriptedHints<'_> {
        ScriptedHints {
            qid,
            gold_label: AnswerLabel::from_char(gold),
            option_count: options,
        }
    }

    fn request<'a>(messages: &'a [ChatMessage], h: ScriptedHints<'a>) -> GenerationRequest<'a> {
        GenerationRequest { messages, hints: Some(h) }
    }

    #[test]
    fn full_accuracy_always_emits_gold() {
        let model = ScriptedModel::new(ScriptedModelConfig {
            accuracy_rate: 1.0,
            fixed_latency_seconds: 0.05,
            seed: 3,
            ..ScriptedModelConfig::default()
        })
        .unwrap();
        let messages = [ChatMessage::user("q")];
        for i in 0..100 {
            let qid = format!("q{i}");
            let result = model.generate(&request(&messages, hints(&qid, 'D', 6))).unwrap();
            assert_eq!(extract_label(&result.text, 6), AnswerLabel::from_char('D'));
            assert!(result.latency_seconds >= 0.05);
            assert_eq!(result.latency_seconds, 0.05);
        }
    }

    #[test]
    fn zero_accuracy_never_emits_gold() {
        let model = ScriptedModel::new(ScriptedModelConfig {
            accuracy_rate: 0.0,
            seed: 4,
            ..ScriptedModelConfig::default()
        })
        .unwrap();
        let messages = [ChatMessage::user("q")];
        for i in 0..200 {
            let qid = format!("q{i}");
            let result = model.generate(&request(&messages, hints(&qid, 'B', 4))).unwrap();
            let label = extract_label(&result.text, 4).unwrap();
            assert_ne!(label, AnswerLabel::from_char('B').unwrap());
        }
    }

    #[test]
    fn partial_accuracy_concentrates_at_its_rate() {
        let model = ScriptedModel::new(ScriptedModelConfig {
            accuracy_rate: 0.8,
            seed: 5,
            ..ScriptedModelConfig::default()
        })
        .unwrap();
        let messages = [ChatMessage::user("q")];
        let gold = AnswerLabel::from_char('A').unwrap();
        let mut correct = 0u64;
        const N: u64 = 10_000;
        for i in 0..N {
            let qid = format!("q{i}");
            let result = model.generate(&request(&messages, hints(&qid, 'A', 10))).unwrap();
            if extract_label(&result.text, 10) == Some(gold) {
                correct += 1;
            }
        }
        let fraction = correct as f64 / N as f64;
        assert!((fraction - 0.8).abs() <= 0.02, "gold fraction {fraction}");
    }

    #[test]
    fn answer_table_overrides_the_accuracy_draw() {
        let mut table = BTreeMap::new();
        table.insert("pinned".to_string(), AnswerLabel::from_char('C').unwrap());
        let model = ScriptedModel::new(ScriptedModelConfig {
            answer_table: table,
            accuracy_rate: 1.0,
            seed: 6,
            ..ScriptedModelConfig::default()
        })
        .unwrap();
        let messages = [ChatMessage::user("q")];
        // Gold is A, but the table pins C.
        let result = model.generate(&request(&messages, hints("pinned", 'A', 4))).unwrap();
        assert_eq!(extract_label(&result.text, 4), AnswerLabel::from_char('C'));
    }

    #[test]
    fn determinism_is_keyed_by_qid_and_call_index_not_global_order() {
        let config = ScriptedModelConfig {
            accuracy_rate: 0.5,
            seed: 7,
            ..ScriptedModelConfig::default()
        };
        let a = ScriptedModel::new(config.clone()).unwrap();
        let b = ScriptedModel::new(config).unwrap();
        let messages = [ChatMessage::user("q")];

        // Same per-qid call sequences, interleaved differently.
        let a_q1_0 = a.generate(&request(&messages, hints("q1", 'A', 10))).unwrap();
        let a_q2_0 = a.generate(&request(&messages, hints("q2", 'A', 10))).unwrap();
        let a_q1_1 = a.generate(&request(&messages, hints("q1", 'A', 10))).unwrap();

        let b_q2_0 = b.generate(&request(&messages, hints("q2", 'A', 10))).unwrap();
        let b_q1_0 = b.generate(&request(&messages, hints("q1", 'A', 10))).unwrap();
        let b_q1_1 = b.generate(&request(&messages, hints("q1", 'A', 10))).unwrap();

        assert_eq!(a_q1_0.text, b_q1_0.text);
        assert_eq!(a_q1_1.text, b_q1_1.text);
        assert_eq!(a_q2_0.text, b_q2_0.text);
    }

    #[test]
    fn scripted_config_validation_rejects_bad_rates() {
        let bad = ScriptedModelConfig { accuracy_rate: 1.5, ..ScriptedModelConfig::default() };
        assert!(matches!(ScriptedModel::new(bad), Err(ModelError::InvalidConfig(_))));
        let bad = ScriptedModelConfig {
            fixed_latency_seconds: -0.1,
            ..ScriptedModelConfig::default()
        };
        assert!(matches!(ScriptedModel::new(bad), Err(ModelError::InvalidConfig(_))));
    }

    // ── HTTP client against a stub server ────────────────────────────────

    /// Minimal one-shot HTTP stub: serves each queued (status, body)
    /// response to one connection, forwarding request bodies for
    /// inspection. `Connection: close` keeps reqwest from pooling.
    fn stub_server(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = match listener.accept() {
                    Ok(pair) => pair,
                    Err(_) => return,
                };
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                let request_body;
                loop {
                    let n = stream.read(&mut chunk).unwrap_or(0);
                    if n == 0 {
                        return;
                    }
                    buf.extend_from_slice(&chunk[..n]);
                    if let Some(split) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                        let header = String::from_utf8_lossy(&buf[..split]).to_string();
                        let content_length: usize = header
                            .lines()
                            .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(str::trim).map(String::from))
                            .and_then(|v| v.parse().ok())
                            .unwrap_or(0);
                        let mut body_bytes = buf[split + 4..].to_vec();
                        while body_bytes.len() < content_length {
                            let n = stream.read(&mut chunk).unwrap_or(0);
                            if n == 0 {
                                break;
                            }
                            body_bytes.extend_from_slice(&chunk[..n]);
                        }
                        request_body = String::from_utf8_lossy(&body_bytes).to_string();
                        break;
                    }
                }
                let _ = tx.send(request_body);
                let reason = if status == 200 { "OK" } else { "ERR" };
                let response = format!(
                    "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(response.as_bytes());
            }
        });
        (format!("http://{addr}"), rx)
    }

    fn fast_config(base_url: &str) -> ModelEndpointConfig {
        let mut config = ModelEndpointConfig::new(base_url, "test-model", ModelRole::Oracle);
        config.timeout_seconds = 5.0;
        config.retry_backoff_seconds = 0.0;
        config
    }

    #[test]
    fn http_client_parses_a_successful_completion() {
        let completion = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": "the answer is (B)"}}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 7}
        });
        let (base, rx) = stub_server(vec![(200, completion.to_string())]);
        let mut config = fast_config(&base);
        config
            .extra_body
            .insert("chat_template_kwargs".into(), serde_json::json!({"enable_thinking": false}));
        let client = HttpModelClient::new(config).unwrap();

        let messages = [ChatMessage::system("answer briefly"), ChatMessage::user("pick one")];
        let result = client
            .generate(&GenerationRequest { messages: &messages, hints: None })
            .unwrap();
        assert_eq!(result.text, "the answer is (B)");
        assert_eq!(result.prompt_tokens, Some(12));
        assert_eq!(result.completion_tokens, Some(7));
        assert!(result.latency_seconds >= 0.0);

        // The request carried the full wire shape, extras included.
        let sent: serde_json::Value = serde_json::from_str(&rx.recv().unwrap()).unwrap();
        assert_eq!(sent["model"], "test-model");
        assert_eq!(sent["temperature"], 0.0);
        assert_eq!(sent["max_tokens"], 4096);
        assert_eq!(sent["messages"][1]["content"], "pick one");
        assert_eq!(sent["chat_template_kwargs"]["enable_thinking"], false);
    }

    #[test]
    fn http_client_retries_5xx_then_fails_with_status() {
        let responses = vec![
            (503, "{}".to_string()),
            (503, "{}".to_string()),
            (503, "{}".to_string()),
        ];
        let (base, _rx) = stub_server(responses);
        let client = HttpModelClient::new(fast_config(&base)).unwrap();
        let messages = [ChatMessage::user("q")];
        match client.generate(&GenerationRequest { messages: &messages, hints: None }) {
            Err(ModelError::HttpStatus { status: 503, attempts: 3 }) => {}
            other => panic!("expected exhausted 503 retries, got {other:?}"),
        }
    }

    #[test]
    fn http_client_recovers_when_a_retry_succeeds() {
        let completion = serde_json::json!({
            "choices": [{"message": {"content": "the answer is (A)"}}]
        });
        let responses = vec![(503, "{}".to_string()), (200, completion.to_string())];
        let (base, _rx) = stub_server(responses);
        let client = HttpModelClient::new(fast_config(&base)).unwrap();
        let messages = [ChatMessage::user("q")];
        let result = client
            .generate(&GenerationRequest { messages: &messages, hints: None })
            .unwrap();
        assert_eq!(result.text, "the answer is (A)");
    }

    #[test]
    fn http_client_does_not_retry_client_errors() {
        let (base, _rx) = stub_server(vec![(404, "{}".to_string())]);
        let client = HttpModelClient::new(fast_config(&base)).unwrap();
        let messages = [ChatMessage::user("q")];
        match client.generate(&GenerationRequest { messages: &messages, hints: None }) {
            Err(ModelError::HttpStatus { status: 404, attempts: 1 }) => {}
            other => panic!("expected immediate 404, got {other:?}"),
        }
    }

    #[test]
    fn http_client_surfaces_empty_completions_distinctly() {
        let empty = serde_json::json!({"choices": [{"message": {"content": ""}}]});
        let (base, _rx) = stub_server(vec![(200, empty.to_string())]);
        let client = HttpModelClient::new(fast_config(&base)).unwrap();
        let messages = [ChatMessage::user("q")];
        assert!(matches!(
            client.generate(&GenerationRequest { messages: &messages, hints: None }),
            Err(ModelError::EmptyCompletion)
        ));
    }

    #[test]
    fn endpoint_config_validation_catches_bad_fields() {
        let mut config = ModelEndpointConfig::new("http://localhost:1", "m", ModelRole::Mc);
        config.temperature = -1.0;
        assert!(matches!(HttpModelClient::new(config), Err(ModelError::InvalidConfig(_))));
        let mut config = ModelEndpointConfig::new("http://localhost:1", "m", ModelRole::Mc);
        config.max_tokens = 0;
        assert!(matches!(HttpModelClient::new(config), Err(ModelError::InvalidConfig(_))));
    }
}
