use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{GenError, GenerationRequest, Generator, InFlightLimit, RetryPolicy};
use crate::error::{Error, Result};

pub const DEFAULT_API_KEY_ENV: &str = "ATOMLITH_API_KEY";
pub const ENDPOINT_ENV: &str = "ATOMLITH_ENDPOINT";

/// Connection settings for an OpenAI-compatible endpoint.
///
/// The API key is never stored here, only the name of the variable holding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientConfig {
    pub endpoint_url: String,
    pub model_name: String,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

fn default_api_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}
fn default_timeout_ms() -> u64 {
    60_000
}
fn default_max_retries() -> u32 {
    5
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_max_in_flight() -> usize {
    8
}

impl ClientConfig {
    pub fn new(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        ClientConfig {
            endpoint_url: endpoint_url.into(),
            model_name: model_name.into(),
            api_key_env: default_api_key_env(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            backoff_base_ms: default_backoff_ms(),
            max_in_flight: default_max_in_flight(),
        }
    }

    /// Endpoint taken from `ATOMLITH_ENDPOINT`.
    pub fn from_env(model_name: impl Into<String>) -> Result<Self> {
        let endpoint = std::env::var(ENDPOINT_ENV)
            .map_err(|_| Error::Config(format!("{ENDPOINT_ENV} is not set")))?;
        Ok(ClientConfig::new(endpoint, model_name))
    }

    pub fn validate(&self) -> Result<()> {
        if self.endpoint_url.trim().is_empty() {
            return Err(Error::Config("endpoint_url is empty".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            backoff_base: Duration::from_millis(self.backoff_base_ms),
        }
    }
}

/// JSON-over-HTTP POST with retries and an in-flight bound. Shared by the
/// chat-completions generator and the remote embedder.
pub struct HttpTransport {
    agent: ureq::Agent,
    base_url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    limit: InFlightLimit,
}

impl HttpTransport {
    pub fn new(config: &ClientConfig) -> Result<Self> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpTransport {
            agent,
            base_url: config.endpoint_url.trim_end_matches('/').to_string(),
            api_key: std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty()),
            retry: config.retry_policy(),
            limit: InFlightLimit::new(config.max_in_flight),
        })
    }

    pub fn max_in_flight(&self) -> usize {
        self.limit.max()
    }

    pub fn post_json(&self, path: &str, body: &Value) -> Result<Value, GenError> {
        let url = format!("{}/{}", self.base_url, path.trim_start_matches('/'));
        self.retry.run(|| self.post_once(&url, body), std::thread::sleep)
    }

    fn post_once(&self, url: &str, body: &Value) -> Result<Value, GenError> {
        let _permit = self.limit.acquire();
        let mut request = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let payload = serde_json::to_vec(body).map_err(|e| GenError::Protocol(e.to_string()))?;
        let mut response = request.send(&payload[..]).map_err(map_ureq_error)?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(map_ureq_error)?;
        if !(200..300).contains(&status) {
            return Err(GenError::Transport { status, body: text });
        }
        serde_json::from_str(&text).map_err(|e| GenError::Protocol(format!("invalid JSON body: {e}")))
    }
}

fn map_ureq_error(e: ureq::Error) -> GenError {
    match e {
        ureq::Error::Timeout(_) => GenError::Timeout,
        ureq::Error::StatusCode(status) => GenError::Transport {
            status,
            body: String::new(),
        },
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => GenError::Timeout,
        ureq::Error::Io(io) => GenError::Connection(io.to_string()),
        ureq::Error::HostNotFound | ureq::Error::ConnectionFailed => {
            GenError::Connection(e.to_string())
        }
        other => GenError::Protocol(other.to_string()),
    }
}

/// Chat-completions client: one user message carrying the rendered prompt.
pub struct HttpGenerator {
    transport: HttpTransport,
    model: String,
}

impl HttpGenerator {
    pub fn new(config: &ClientConfig) -> Result<Self> {
        Ok(HttpGenerator {
            transport: HttpTransport::new(config)?,
            model: config.model_name.clone(),
        })
    }

    pub fn max_in_flight(&self) -> usize {
        self.transport.max_in_flight()
    }

    fn body(&self, request: &GenerationRequest) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(stop) = &request.stop {
            body["stop"] = json!(stop);
        }
        body
    }
}

impl Generator for HttpGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<String, GenError> {
        let response = self.transport.post_json("chat/completions", &self.body(request))?;
        response
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| GenError::Protocol("missing choices[0].message.content".into()))
    }
}
