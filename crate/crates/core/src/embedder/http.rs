use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbeddingVector, EncoderProvider};
use crate::error::{Error, Result};

pub const ENDPOINT_VAR: &str = "REC_ENCODER_ENDPOINT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeResponse {
    pub vectors: Vec<Vec<f64>>,
}

/// Remote sentence encoder. Vectors are used exactly as returned.
pub struct HttpEncoder {
    endpoint: String,
    dim: usize,
    agent: ureq::Agent,
}

impl HttpEncoder {
    pub fn new(endpoint: impl Into<String>, dim: usize, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpEncoder {
            endpoint: endpoint.into(),
            dim,
            agent,
        }
    }

    pub fn from_env(dim: usize, timeout: Duration) -> Result<Self> {
        let endpoint = std::env::var(ENDPOINT_VAR)
            .map_err(|_| Error::Config(format!("{ENDPOINT_VAR} is not set")))?;
        Ok(Self::new(endpoint, dim, timeout))
    }
}

impl EncoderProvider for HttpEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let body = EncodeRequest {
            texts: texts.to_vec(),
        };
        let mut response = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| Error::Encoder(e.to_string()))?;
        let parsed: EncodeResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| Error::Encoder(format!("bad response body: {e}")))?;
        Ok(parsed.vectors.into_iter().map(EmbeddingVector).collect())
    }
}
