//! Client for a chat-completions style text-generation service.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::generator::{GenerateError, Generator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteGeneratorConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub token_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

fn default_timeout() -> u64 {
    60
}

fn default_retries() -> u32 {
    3
}

fn default_backoff() -> u64 {
    500
}

/// Bearer token; never printed.
#[derive(Clone)]
struct Secret(String);

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("<redacted>")
    }
}

#[derive(Debug)]
pub struct RemoteGenerator {
    config: RemoteGeneratorConfig,
    token: Option<Secret>,
    client: reqwest::blocking::Client,
}

impl RemoteGenerator {
    /// Reads the token from the configured environment variable, if any.
    pub fn new(config: RemoteGeneratorConfig) -> Result<Self, GenerateError> {
        let token = match &config.token_env {
            Some(var) => Some(Secret(std::env::var(var).map_err(|_| {
                GenerateError::Transport(format!("environment variable {var} is not set"))
            })?)),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GenerateError::Transport(e.to_string()))?;
        Ok(RemoteGenerator { config, token, client })
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<Vec<String>, (bool, String)> {
        let mut req = self.client.post(&self.config.endpoint).json(body);
        if let Some(Secret(t)) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| (true, e.without_url().to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let retry = status.is_server_error() || status.as_u16() == 429;
            return Err((retry, format!("HTTP {status}")));
        }
        let parsed: ChatResponse = resp.json().map_err(|e| (false, format!("bad response body: {e}")))?;
        Ok(parsed
            .choices
            .into_iter()
            .map(|c| c.message.map(|m| m.content).or(c.text).unwrap_or_default())
            .collect())
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    #[serde(default)]
    message: Option<Message>,
    #[serde(default)]
    text: Option<String>,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: String,
}

impl Generator for RemoteGenerator {
    fn generate(&self, prompt: &str, n: usize, temperature: f64) -> Result<Vec<String>, GenerateError> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "n": n,
            "temperature": temperature,
        });
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.config.backoff_ms << (attempt - 1).min(10)));
            }
            match self.attempt(&body) {
                Ok(out) => return Ok(out),
                Err((retry, msg)) => {
                    tracing::warn!(attempt, error = %msg, "generation request failed");
                    last = msg;
                    if !retry {
                        break;
                    }
                }
            }
        }
        Err(GenerateError::Transport(last))
    }
}
