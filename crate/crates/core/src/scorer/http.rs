//! HTTP backend speaking the sidecar wire protocol, fronted by the response
//! cache. A warm cache answers every request without touching the network.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use super::cache::{canonical_json, sha256_hex, ResponseCache};
use super::wire::{
    CapabilitiesResponse, ClozeRequest, ContinuationRequest, DiscriminateRequest,
    DiscriminateResponse, EmbedRequest, EmbedResponse, SequenceRequest, SequenceResponse,
    TokenProbs, PATH_CAPABILITIES, PATH_CLOZE, PATH_CONTINUATION, PATH_DISCRIMINATE, PATH_EMBED,
    PATH_SEQUENCE,
};
use super::{Backend, Reply, RequestContext, ScoreError, ScorerCapabilities};

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    /// Run `op`, retrying retryable failures with doubling delays.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, ScoreError>) -> Result<T, ScoreError> {
        let mut delay = self.base_delay;
        let mut attempt = 1;
        loop {
            match op() {
                Err(e) if e.is_retryable() && attempt < self.attempts => {
                    log::warn!("attempt {attempt} failed ({e}); retrying in {delay:?}");
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

pub struct HttpBackend {
    id: String,
    endpoint: String,
    agent: ureq::Agent,
    cache: ResponseCache,
    retry: RetryPolicy,
    sent: AtomicUsize,
    caps: OnceLock<ScorerCapabilities>,
}

/// Default backend id for an endpoint: `http-` plus a short endpoint hash.
pub fn default_backend_id(endpoint: &str) -> String {
    format!(
        "http-{}",
        &sha256_hex(endpoint.trim_end_matches('/').as_bytes())[..16]
    )
}

fn map_ureq(e: ureq::Error) -> ScoreError {
    match e {
        ureq::Error::Timeout(_) => ScoreError::Timeout,
        ureq::Error::StatusCode(status) => ScoreError::Http {
            status,
            body: String::new(),
        },
        ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
            ScoreError::Transport {
                message: e.to_string(),
                retryable: true,
            }
        }
        other => ScoreError::Transport {
            message: other.to_string(),
            retryable: false,
        },
    }
}

impl HttpBackend {
    pub fn new(
        endpoint: &str,
        cache_dir: &Path,
        backend_id: Option<&str>,
    ) -> Result<Self, ScoreError> {
        let endpoint = endpoint.trim_end_matches('/').to_string();
        let id = backend_id.map_or_else(|| default_backend_id(&endpoint), str::to_string);
        let cache = ResponseCache::open(cache_dir, &id)?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(DEFAULT_TIMEOUT))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Ok(Self {
            id,
            endpoint,
            agent,
            cache,
            retry: RetryPolicy::default(),
            sent: AtomicUsize::new(0),
            caps: OnceLock::new(),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    /// Number of HTTP requests actually sent (cache hits excluded).
    pub fn requests_sent(&self) -> usize {
        self.sent.load(Ordering::SeqCst)
    }

    fn send_once(&self, path: &str, body: &Value) -> Result<Value, ScoreError> {
        self.sent.fetch_add(1, Ordering::SeqCst);
        let url = format!("{}{}", self.endpoint, path);
        let response = if path == PATH_CAPABILITIES {
            self.agent.get(&url).call()
        } else {
            self.agent
                .post(&url)
                .header("content-type", "application/json")
                .send(canonical_json(body))
        };
        let mut response = response.map_err(map_ureq)?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(map_ureq)?;
        if status != 200 {
            return Err(ScoreError::Http { status, body: text });
        }
        serde_json::from_str(&text)
            .map_err(|e| ScoreError::Protocol(format!("{path}: malformed JSON response: {e}")))
    }

    /// Cached call: returns the typed, validated reply and its cache key.
    fn call<T: DeserializeOwned + Serialize>(
        &self,
        path: &str,
        body: Value,
        validate: impl Fn(&T) -> Result<(), ScoreError>,
    ) -> Result<Reply<T>, ScoreError> {
        let key = super::cache::request_key(path, &body);
        if let Some(raw) = self.cache.get(&key) {
            let value: T = serde_json::from_value(raw).map_err(|e| ScoreError::Cache {
                file: self.cache.path().to_path_buf(),
                line: 0,
                message: format!("cached response for {key} does not decode: {e}"),
            })?;
            return Ok(Reply {
                value,
                reference: Some(key),
            });
        }
        let raw = self.retry.run(|| self.send_once(path, &body))?;
        let value: T = serde_json::from_value(raw.clone())
            .map_err(|e| ScoreError::Protocol(format!("{path}: unexpected response shape: {e}")))?;
        validate(&value)?;
        let key = self.cache.insert(path, &body, raw)?;
        Ok(Reply {
            value,
            reference: Some(key),
        })
    }
}

fn to_body<T: Serialize>(req: &T) -> Value {
    serde_json::to_value(req).expect("wire requests serialize")
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> Result<ScorerCapabilities, ScoreError> {
        if let Some(caps) = self.caps.get() {
            return Ok(*caps);
        }
        let reply: Reply<CapabilitiesResponse> =
            self.call(PATH_CAPABILITIES, Value::Null, |_| Ok(()))?;
        let caps = ScorerCapabilities::from(reply.value);
        if !caps.can_score() && !caps.supports_embed {
            return Err(ScoreError::Protocol(
                "backend advertises no capabilities".into(),
            ));
        }
        Ok(*self.caps.get_or_init(|| caps))
    }

    fn cloze(
        &self,
        req: &ClozeRequest,
        _: &RequestContext<'_>,
    ) -> Result<Reply<TokenProbs>, ScoreError> {
        self.call(PATH_CLOZE, to_body(req), |r: &TokenProbs| {
            r.validate(&req.candidates)
        })
    }

    fn continuation(
        &self,
        req: &ContinuationRequest,
        _: &RequestContext<'_>,
    ) -> Result<Reply<TokenProbs>, ScoreError> {
        self.call(PATH_CONTINUATION, to_body(req), |r: &TokenProbs| {
            r.validate(&req.candidates)
        })
    }

    fn sequence(
        &self,
        req: &SequenceRequest,
        _: &RequestContext<'_>,
    ) -> Result<Reply<SequenceResponse>, ScoreError> {
        self.call(PATH_SEQUENCE, to_body(req), |r: &SequenceResponse| {
            r.score(req.aggregation).map(|_| ())
        })
    }

    fn discriminate(
        &self,
        req: &DiscriminateRequest,
        _: &RequestContext<'_>,
    ) -> Result<Reply<DiscriminateResponse>, ScoreError> {
        self.call(
            PATH_DISCRIMINATE,
            to_body(req),
            DiscriminateResponse::validate,
        )
    }

    fn embed(
        &self,
        req: &EmbedRequest,
        _: &RequestContext<'_>,
    ) -> Result<Reply<EmbedResponse>, ScoreError> {
        self.call(PATH_EMBED, to_body(req), EmbedResponse::validate)
    }
}
