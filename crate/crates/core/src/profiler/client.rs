use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Text generation backend. Implementations must return an error rather than
/// a placeholder when generation fails.
pub trait GenerationClient: Send + Sync {
    fn generate(&self, prompt: &str) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub model: String,
    pub prompt: String,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
}

pub const ENDPOINT_VAR: &str = "REC_LLM_ENDPOINT";
pub const API_KEY_VAR: &str = "REC_LLM_API_KEY";

/// JSON-over-HTTP generation client.
pub struct HttpGenerationClient {
    endpoint: String,
    api_key: Option<String>,
    pub model: String,
    pub max_tokens: u32,
    agent: ureq::Agent,
}

impl HttpGenerationClient {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpGenerationClient {
            endpoint: endpoint.into(),
            api_key,
            model: "gpt-4o-mini".to_string(),
            max_tokens: 256,
            agent,
        }
    }

    /// Reads the endpoint and key from `REC_LLM_ENDPOINT` / `REC_LLM_API_KEY`.
    pub fn from_env(timeout: Duration) -> Result<Self> {
        let endpoint = std::env::var(ENDPOINT_VAR)
            .map_err(|_| Error::Config(format!("{ENDPOINT_VAR} is not set")))?;
        Ok(Self::new(
            endpoint,
            std::env::var(API_KEY_VAR).ok(),
            timeout,
        ))
    }
}

impl GenerationClient for HttpGenerationClient {
    fn generate(&self, prompt: &str) -> Result<String> {
        let body = GenerationRequest {
            model: self.model.clone(),
            prompt: prompt.to_string(),
            max_tokens: self.max_tokens,
        };
        let mut request = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| Error::Client(e.to_string()))?;
        let parsed: GenerationResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| Error::Client(format!("bad response body: {e}")))?;
        Ok(parsed.text)
    }
}
