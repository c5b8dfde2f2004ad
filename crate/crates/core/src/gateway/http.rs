//! Live HTTP provider speaking the chat-completions wire format.

use std::time::Duration;

use super::{CallContext, CompletionRequest, GatewayError, Provider, ProviderKind};

/// Environment variable holding the bearer token. The key is never accepted
/// via flags or config files.
pub const API_KEY_ENV: &str = "CONSENSUS_DX_API_KEY";

/// POSTs `{base_url}/chat/completions` with a single user message and the
/// request's decoding parameters.
pub struct HttpProvider {
    base_url: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    pub fn new(base_url: &str, api_key: String) -> HttpProvider {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .expect("HTTP client builds");
        HttpProvider {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            client,
        }
    }

    /// Read the bearer token from [`API_KEY_ENV`].
    pub fn from_env(base_url: &str) -> Result<HttpProvider, GatewayError> {
        Self::with_key(base_url, std::env::var(API_KEY_ENV).ok())
    }

    fn with_key(base_url: &str, key: Option<String>) -> Result<HttpProvider, GatewayError> {
        match key {
            Some(key) if !key.trim().is_empty() => Ok(Self::new(base_url, key)),
            _ => Err(GatewayError::MissingApiKey(API_KEY_ENV)),
        }
    }
}

fn snippet(text: &str) -> String {
    let trimmed = text.trim();
    if trimmed.chars().count() > 200 {
        let cut: String = trimmed.chars().take(200).collect();
        format!("{cut}…")
    } else {
        trimmed.to_string()
    }
}

impl Provider for HttpProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Http
    }

    fn complete(
        &self,
        request: &CompletionRequest,
        _context: &CallContext,
    ) -> Result<String, GatewayError> {
        let body = serde_json::json!({
            "model": request.model_name,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_output_tokens,
        });
        let url = format!("{}/chat/completions", self.base_url);
        let response = self
            .client
            .post(&url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|err| GatewayError::Network(err.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .text()
            .map_err(|err| GatewayError::Network(err.to_string()))?;
        match status {
            401 | 403 => Err(GatewayError::Auth { status }),
            200..=299 => {
                let value: serde_json::Value = serde_json::from_str(&text).map_err(|err| {
                    GatewayError::Protocol(format!("response is not JSON: {err}"))
                })?;
                value["choices"][0]["message"]["content"]
                    .as_str()
                    .map(str::to_string)
                    .ok_or_else(|| {
                        GatewayError::Protocol(
                            "response lacks choices[0].message.content".to_string(),
                        )
                    })
            }
            _ => Err(GatewayError::Http {
                status,
                message: snippet(&text),
            }),
        }
    }
}
