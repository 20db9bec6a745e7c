//! Client for a completions-style HTTP service with echoed token
//! log-probabilities.
//!
//! The service is asked to echo the concatenated `context + continuation`
//! with per-token log-probs and text offsets; the continuation's tokens are
//! sliced off at the context's byte boundary. If a token straddles that
//! boundary the call fails loudly rather than approximate, since a silent
//! misalignment would corrupt every downstream score.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendScore};
use crate::scoring::{TokenLogProbs, LOG_PROB_FLOOR};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServiceBackendConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token. When the
    /// variable is unset the request carries no Authorization header, which
    /// suits local inference servers.
    pub auth_env: String,
    #[serde(default = "default_completions_path")]
    pub completions_path: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Requests per second for the token-bucket pacer; unlimited when absent.
    #[serde(default)]
    pub requests_per_second: Option<f64>,
    #[serde(default = "default_backoff_ms")]
    pub initial_backoff_ms: u64,
}

fn default_completions_path() -> String {
    "/v1/completions".to_string()
}

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_max_retries() -> u32 {
    5
}

fn default_parallelism() -> usize {
    4
}

fn default_backoff_ms() -> u64 {
    250
}

impl ServiceBackendConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            auth_env: "SFC_API_KEY".to_string(),
            completions_path: default_completions_path(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            parallelism: default_parallelism(),
            requests_per_second: None,
            initial_backoff_ms: default_backoff_ms(),
        }
    }

    fn validate(&self) -> Result<(), BackendError> {
        if self.parallelism < 1 {
            return Err(BackendError::InvalidSpec(
                "service parallelism cap must be >= 1".into(),
            ));
        }
        if let Some(rps) = self.requests_per_second {
            if !(rps > 0.0) {
                return Err(BackendError::InvalidSpec(format!(
                    "requests_per_second must be positive, got {rps}"
                )));
            }
        }
        Ok(())
    }

    fn endpoint(&self) -> String {
        format!(
            "{}{}",
            self.base_url.trim_end_matches('/'),
            self.completions_path
        )
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    echo: bool,
    logprobs: u32,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    logprobs: Option<EchoedLogProbs>,
}

#[derive(Deserialize)]
struct EchoedLogProbs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    text_offset: Vec<usize>,
}

/// Slices the echoed per-token log-probs of `context + continuation` at the
/// context's byte boundary, returning the continuation's tokens and values.
pub(crate) fn slice_echoed_logprobs(
    context: &str,
    continuation: &str,
    tokens: &[String],
    token_logprobs: &[Option<f64>],
    text_offset: &[usize],
) -> Result<(Vec<String>, Vec<f64>), BackendError> {
    if tokens.len() != token_logprobs.len() || tokens.len() != text_offset.len() {
        return Err(BackendError::MalformedResponse(format!(
            "unaligned logprob arrays: {} tokens, {} logprobs, {} offsets",
            tokens.len(),
            token_logprobs.len(),
            text_offset.len()
        )));
    }
    let boundary = context.len();
    let mut start = None;
    for (i, &offset) in text_offset.iter().enumerate() {
        if offset == boundary {
            start = Some(i);
            break;
        }
        if offset > boundary {
            return Err(BackendError::BoundarySplit { offset: boundary });
        }
    }
    let start = match start {
        Some(i) => i,
        None => {
            // Every token starts inside the context; the continuation either
            // is empty (checked by the caller) or begins mid-token.
            return Err(BackendError::BoundarySplit { offset: boundary });
        }
    };
    let out_tokens: Vec<String> = tokens[start..].to_vec();
    let mut out_values = Vec::with_capacity(out_tokens.len());
    for (i, lp) in token_logprobs[start..].iter().enumerate() {
        match lp {
            Some(v) if v.is_finite() => out_values.push(v.min(0.0).max(LOG_PROB_FLOOR)),
            Some(_) => out_values.push(LOG_PROB_FLOOR),
            None => {
                return Err(BackendError::MalformedResponse(format!(
                    "missing log-probability for continuation token {} ({:?}); the service cannot score the first token of an empty context",
                    i, out_tokens[i]
                )))
            }
        }
    }
    let rebuilt: String = out_tokens.concat();
    if rebuilt != continuation {
        return Err(BackendError::MalformedResponse(format!(
            "echoed tokens rebuild {rebuilt:?}, expected continuation {continuation:?}"
        )));
    }
    Ok((out_tokens, out_values))
}

/// Counting semaphore bounding the number of in-flight requests.
struct BoundedPermits {
    available: Mutex<usize>,
    freed: Condvar,
}

impl BoundedPermits {
    fn new(count: usize) -> Self {
        Self {
            available: Mutex::new(count),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut available = self.available.lock().unwrap();
        while *available == 0 {
            available = self.freed.wait(available).unwrap();
        }
        *available -= 1;
        PermitGuard { permits: self }
    }
}

struct PermitGuard<'a> {
    permits: &'a BoundedPermits,
}

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        let mut available = self.permits.available.lock().unwrap();
        *available += 1;
        self.permits.freed.notify_one();
    }
}

/// Token-bucket pacer: refills at `rate` tokens per second up to a one-second
/// burst.
struct TokenBucket {
    state: Mutex<(f64, Instant)>,
    rate: f64,
    capacity: f64,
}

impl TokenBucket {
    fn new(rate: f64) -> Self {
        let capacity = rate.max(1.0);
        Self {
            state: Mutex::new((capacity, Instant::now())),
            rate,
            capacity,
        }
    }

    fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().unwrap();
                let now = Instant::now();
                let elapsed = now.duration_since(state.1).as_secs_f64();
                state.0 = (state.0 + elapsed * self.rate).min(self.capacity);
                state.1 = now;
                if state.0 >= 1.0 {
                    state.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - state.0) / self.rate)
            };
            std::thread::sleep(wait);
        }
    }
}

pub struct ServiceBackend {
    config: ServiceBackendConfig,
    client: reqwest::blocking::Client,
    auth_token: Option<String>,
    permits: BoundedPermits,
    pacer: Option<TokenBucket>,
    model_id: String,
}

impl ServiceBackend {
    pub fn new(config: ServiceBackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| BackendError::Transport {
                status: None,
                message: e.to_string(),
            })?;
        let auth_token = std::env::var(&config.auth_env).ok().filter(|t| !t.is_empty());
        let permits = BoundedPermits::new(config.parallelism);
        let pacer = config.requests_per_second.map(TokenBucket::new);
        let model_id = config.model.clone();
        Ok(Self {
            config,
            client,
            auth_token,
            permits,
            pacer,
            model_id,
        })
    }

    fn request_once(&self, prompt: &str) -> Result<CompletionResponse, RequestFailure> {
        let body = CompletionRequest {
            model: &self.config.model,
            prompt,
            max_tokens: 0,
            echo: true,
            logprobs: 1,
        };
        let mut request = self.client.post(self.config.endpoint()).json(&body);
        if let Some(token) = &self.auth_token {
            request = request.bearer_auth(token);
        }
        let response = request.send().map_err(|e| RequestFailure {
            status: None,
            message: e.to_string(),
            retryable: true,
        })?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(RequestFailure {
                status: Some(status.as_u16()),
                message: format!("service returned {status}"),
                retryable: true,
            });
        }
        if !status.is_success() {
            return Err(RequestFailure {
                status: Some(status.as_u16()),
                message: format!("service returned {status}"),
                retryable: false,
            });
        }
        response.json().map_err(|e| RequestFailure {
            status: None,
            message: format!("bad response body: {e}"),
            retryable: false,
        })
    }

    /// Sends with bounded parallelism, pacing, and jittered exponential
    /// backoff on 429/5xx and transport errors. Scoring is a read, so
    /// retries are idempotent.
    fn request_with_retries(&self, prompt: &str) -> Result<CompletionResponse, BackendError> {
        let mut attempt = 0u32;
        loop {
            if let Some(pacer) = &self.pacer {
                pacer.acquire();
            }
            let outcome = {
                let _permit = self.permits.acquire();
                self.request_once(prompt)
            };
            match outcome {
                Ok(response) => return Ok(response),
                Err(failure) if failure.retryable && attempt < self.config.max_retries => {
                    let backoff = self.config.initial_backoff_ms.saturating_mul(1 << attempt.min(10));
                    let jitter = rand::random::<f64>() * 0.5 + 0.75;
                    std::thread::sleep(Duration::from_millis(
                        ((backoff as f64) * jitter) as u64,
                    ));
                    attempt += 1;
                }
                Err(failure) => {
                    return Err(BackendError::Transport {
                        status: failure.status,
                        message: failure.message,
                    })
                }
            }
        }
    }
}

struct RequestFailure {
    status: Option<u16>,
    message: String,
    retryable: bool,
}

impl Backend for ServiceBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn score_continuation(
        &self,
        context: &str,
        continuation: &str,
    ) -> Result<BackendScore, BackendError> {
        if continuation.is_empty() {
            return Err(BackendError::EmptyContinuation);
        }
        let prompt = format!("{context}{continuation}");
        let response = self.request_with_retries(&prompt)?;
        let choice = response
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::MalformedResponse("no choices in response".into()))?;
        let echoed = choice
            .logprobs
            .ok_or_else(|| BackendError::MalformedResponse("response carries no logprobs".into()))?;
        let (tokens, values) = slice_echoed_logprobs(
            context,
            continuation,
            &echoed.tokens,
            &echoed.token_logprobs,
            &echoed.text_offset,
        )?;
        let score = BackendScore {
            tokens,
            logprobs: TokenLogProbs::new(values)?,
            model_id: self.model_id.clone(),
            context_echo: context.to_string(),
        };
        score.validate(continuation)?;
        Ok(score)
    }
}
