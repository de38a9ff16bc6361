//! Minimal JSON-over-HTTP client shared by the live transport and the
//! endpoint embedder.

use std::time::Duration;

use serde_json::Value;

/// Environment variable holding the bearer token for remote endpoints.
pub const API_KEY_ENV: &str = "LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HttpError {
    /// Connection problems, timeouts, 429 and 5xx. Worth retrying.
    #[error("transient: {0}")]
    Transient(String),
    /// Anything a retry will not fix (4xx, malformed body).
    #[error("{0}")]
    Permanent(String),
}

impl HttpError {
    pub fn is_transient(&self) -> bool {
        matches!(self, HttpError::Transient(_))
    }
}

/// Joins a base URL and a path without doubling or dropping the slash.
pub fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
    bearer: Option<String>,
}

impl JsonClient {
    pub fn new(bearer: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, bearer }
    }

    /// Reads the bearer token from [`API_KEY_ENV`] if set.
    pub fn from_env(timeout: Duration) -> Self {
        Self::new(std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()), timeout)
    }

    pub fn post_json(&self, url: &str, body: &Value) -> Result<Value, HttpError> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.bearer {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let resp = req
            .send(body.to_string())
            .map_err(|e| HttpError::Transient(format!("POST {url}: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .into_body()
            .read_to_string()
            .map_err(|e| HttpError::Transient(format!("reading response from {url}: {e}")))?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| HttpError::Permanent(format!("response from {url} is not JSON: {e}"))),
            429 | 500..=599 => Err(HttpError::Transient(format!("{url} answered {status}"))),
            _ => Err(HttpError::Permanent(format!("{url} answered {status}: {}", truncate(&text, 200)))),
        }
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
