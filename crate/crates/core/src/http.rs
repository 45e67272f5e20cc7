//! Blocking JSON-over-HTTP with exponential backoff, shared by the embedding
//! and chat-completion clients.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("network error: {0}")]
    Network(String),
    #[error("authentication rejected (status {0})")]
    Auth(u16),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("server returned status {status} after {attempts} attempts: {body}")]
    Status { status: u16, attempts: u32, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub timeout_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff_ms: 250,
            max_backoff_ms: 8_000,
            timeout_ms: 60_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based: the wait after the first failure is `attempt = 1`).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(20);
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms))
    }
}

/// Successful response body plus the number of attempts it took.
#[derive(Debug)]
pub struct JsonResponse {
    pub body: serde_json::Value,
    pub attempts: u32,
}

pub fn build_client(policy: &RetryPolicy) -> Result<Client, HttpError> {
    Client::builder()
        .timeout(Duration::from_millis(policy.timeout_ms))
        .build()
        .map_err(|e| HttpError::Network(e.to_string()))
}

enum Attempt {
    Done(serde_json::Value),
    Retry(HttpError),
    Fail(HttpError),
}

fn attempt_once(
    client: &Client,
    url: &str,
    body: &serde_json::Value,
    api_key: Option<&str>,
    attempts: u32,
) -> Attempt {
    let mut req = client.post(url).json(body);
    if let Some(key) = api_key {
        req = req.bearer_auth(key);
    }
    let resp = match req.send() {
        Ok(r) => r,
        Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => {
            return Attempt::Retry(HttpError::Network(e.to_string()))
        }
        Err(e) => return Attempt::Fail(HttpError::Network(e.to_string())),
    };
    let status = resp.status();
    let text = match resp.text() {
        Ok(t) => t,
        Err(e) => return Attempt::Retry(HttpError::Network(e.to_string())),
    };
    match status {
        s if s.is_success() => match serde_json::from_str(&text) {
            Ok(v) => Attempt::Done(v),
            Err(e) => Attempt::Fail(HttpError::MalformedResponse(e.to_string())),
        },
        StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => Attempt::Fail(HttpError::Auth(status.as_u16())),
        StatusCode::TOO_MANY_REQUESTS => Attempt::Retry(HttpError::RateLimited { attempts }),
        s if s.is_server_error() => Attempt::Retry(HttpError::Status {
            status: s.as_u16(),
            attempts,
            body: text,
        }),
        s => Attempt::Fail(HttpError::Status {
            status: s.as_u16(),
            attempts,
            body: text,
        }),
    }
}

/// POSTs `body` as JSON, retrying 5xx, 429 and transport failures up to
/// `policy.max_attempts` times in total.
pub fn post_json(
    client: &Client,
    url: &str,
    body: &serde_json::Value,
    api_key: Option<&str>,
    policy: &RetryPolicy,
) -> Result<JsonResponse, HttpError> {
    let max = policy.max_attempts.max(1);
    let mut attempt = 1;
    loop {
        match attempt_once(client, url, body, api_key, attempt) {
            Attempt::Done(body) => {
                tracing::debug!(url, attempts = attempt, "request succeeded");
                return Ok(JsonResponse { body, attempts: attempt });
            }
            Attempt::Fail(e) => return Err(e),
            Attempt::Retry(e) if attempt >= max => {
                return Err(match e {
                    HttpError::RateLimited { .. } => HttpError::RateLimited { attempts: attempt },
                    other => other,
                });
            }
            Attempt::Retry(e) => {
                let wait = policy.backoff(attempt);
                tracing::warn!(url, attempt, error = %e, wait_ms = wait.as_millis() as u64, "retrying request");
                std::thread::sleep(wait);
                attempt += 1;
            }
        }
    }
}

/// Reads an API key from the named environment variable, treating empty as unset.
pub fn api_key_from_env(var: Option<&str>) -> Option<String> {
    let var = var?;
    std::env::var(var).ok().filter(|v| !v.is_empty())
}
