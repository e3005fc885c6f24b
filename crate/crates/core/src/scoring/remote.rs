//! Client for completion services that echo per-token log probabilities.
//!
//! Wire contract (OpenAI-style completions):
//!
//! ```text
//! POST <endpoint>
//! Authorization: Bearer <key>          (only when a key is configured)
//! {"model": "<model>", "prompt": "<sentence>", "max_tokens": 0,
//!  "echo": true, "logprobs": 0, "temperature": 0.0}
//!
//! 200 OK
//! {"choices": [{"logprobs": {"tokens": ["A", " room", ...],
//!                            "token_logprobs": [null, -3.2, ...],
//!                            "text_offset": [0, 1, ...]}}]}
//! ```
//!
//! `tokens` and `token_logprobs` must be non-empty and of equal length;
//! every present log probability must be finite and not positive. When
//! `text_offset` is given, tokens starting at or beyond the end of the
//! prompt (generated continuations) are dropped. Anything else is a
//! transport error.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use crate::error::{Error, Result, ScoreError};

use super::{check_sentence, SentenceScore, SentenceScorer, TokenLogProb};

pub const ENV_ENDPOINT: &str = "ROOMLABEL_ENDPOINT";
pub const ENV_API_KEY: &str = "ROOMLABEL_API_KEY";
pub const ENV_MODEL: &str = "ROOMLABEL_MODEL";

pub const DEFAULT_MODEL: &str = "EleutherAI/gpt-j-6b";

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub max_inflight: usize,
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            model: DEFAULT_MODEL.to_string(),
            api_key: None,
            max_inflight: 4,
            max_attempts: 5,
            initial_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
        }
    }

    /// Reads endpoint, model and key from the environment.
    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var(ENV_ENDPOINT).map_err(|_| Error::param(format!("{ENV_ENDPOINT} is not set")))?;
        let mut cfg = RemoteConfig::new(endpoint);
        if let Ok(model) = std::env::var(ENV_MODEL) {
            cfg.model = model;
        }
        cfg.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        Ok(cfg)
    }
}

/// Counting semaphore bounding concurrent requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Gate {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    logprobs: Option<Logprobs>,
}

#[derive(Deserialize)]
struct Logprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    #[serde(default)]
    text_offset: Option<Vec<usize>>,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

pub struct RemoteScorer {
    client: reqwest::blocking::Client,
    config: RemoteConfig,
    gate: Gate,
}

impl RemoteScorer {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        if config.max_attempts == 0 {
            return Err(Error::param("max_attempts must be at least 1"));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::param(format!("cannot build HTTP client: {e}")))?;
        Ok(RemoteScorer {
            client,
            gate: Gate::new(config.max_inflight),
            config,
        })
    }

    fn attempt(&self, sentence: &str) -> std::result::Result<Vec<TokenLogProb>, Attempt> {
        let body = json!({
            "model": self.config.model,
            "prompt": sentence,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
            "temperature": 0.0,
        });
        let mut req = self.client.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = {
            let _permit = self.gate.acquire();
            req.send().map_err(|e| Attempt::Retry(format!("request failed: {e}")))?
        };
        let status = resp.status();
        if status.is_client_error() && status.as_u16() != 429 {
            return Err(Attempt::Fatal(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        let parsed: CompletionResponse = resp
            .json()
            .map_err(|e| Attempt::Fatal(format!("malformed response: {e}")))?;
        parse_logprobs(sentence, parsed).map_err(Attempt::Fatal)
    }
}

fn parse_logprobs(sentence: &str, resp: CompletionResponse) -> std::result::Result<Vec<TokenLogProb>, String> {
    let lp = resp
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.logprobs)
        .ok_or("response has no choices[0].logprobs")?;
    if lp.tokens.is_empty() || lp.tokens.len() != lp.token_logprobs.len() {
        return Err(format!(
            "tokens ({}) and token_logprobs ({}) must be non-empty and equal in length",
            lp.tokens.len(),
            lp.token_logprobs.len()
        ));
    }
    let keep = match &lp.text_offset {
        Some(offsets) if offsets.len() == lp.tokens.len() => {
            offsets.iter().take_while(|&&o| o < sentence.len()).count()
        }
        Some(_) => return Err("text_offset length does not match tokens".into()),
        None => lp.tokens.len(),
    };
    let mut out = Vec::with_capacity(keep);
    for (token, logprob) in lp.tokens.into_iter().zip(lp.token_logprobs).take(keep) {
        if let Some(v) = logprob {
            if !v.is_finite() || v > 0.0 {
                return Err(format!("invalid log probability {v} for token {token:?}"));
            }
        }
        out.push(TokenLogProb { token, logprob });
    }
    Ok(out)
}

impl SentenceScorer for RemoteScorer {
    fn identity(&self) -> String {
        format!("remote:{}", self.config.model)
    }

    fn score(&self, sentence: &str) -> std::result::Result<SentenceScore, ScoreError> {
        check_sentence(sentence)?;
        let mut delay = self.config.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=self.config.max_attempts {
            match self.attempt(sentence) {
                Ok(tokens) => return SentenceScore::from_tokens(sentence, &self.identity(), tokens),
                Err(Attempt::Fatal(msg)) => return Err(ScoreError::transport(sentence, msg)),
                Err(Attempt::Retry(msg)) => {
                    log::warn!(
                        "attempt {attempt}/{} for {sentence:?} failed: {msg}",
                        self.config.max_attempts
                    );
                    last = msg;
                    if attempt < self.config.max_attempts {
                        thread::sleep(delay);
                        delay = delay.saturating_mul(2);
                    }
                }
            }
        }
        Err(ScoreError::transport(
            sentence,
            format!("gave up after {} attempts: {last}", self.config.max_attempts),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resp(v: serde_json::Value) -> CompletionResponse {
        serde_json::from_value(v).unwrap()
    }

    #[test]
    fn parses_echoed_logprobs() {
        let r = resp(json!({"choices": [{"logprobs": {
            "tokens": ["A", " room"], "token_logprobs": [null, -1.25]}}]}));
        let t = parse_logprobs("A room", r).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].logprob, None);
        assert_eq!(t[1].logprob, Some(-1.25));
    }

    #[test]
    fn drops_generated_tail() {
        let r = resp(json!({"choices": [{"logprobs": {
            "tokens": ["A", " room", " is"], "token_logprobs": [null, -1.0, -2.0],
            "text_offset": [0, 1, 6]}}]}));
        let t = parse_logprobs("A room", r).unwrap();
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn rejects_bad_shapes() {
        let bad = [
            json!({"choices": []}),
            json!({"choices": [{"logprobs": null}]}),
            json!({"choices": [{"logprobs": {"tokens": ["A"], "token_logprobs": []}}]}),
            json!({"choices": [{"logprobs": {"tokens": ["A", "b"], "token_logprobs": [null, 0.5]}}]}),
        ];
        for b in bad {
            assert!(parse_logprobs("A b", resp(b)).is_err());
        }
    }

    #[test]
    fn gate_limits_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let gate = Gate::new(2);
        let active = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    let _p = gate.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    thread::sleep(Duration::from_millis(5));
                    active.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
