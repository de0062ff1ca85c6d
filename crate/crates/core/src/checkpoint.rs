//! Versioned JSON container for trained models.
//!
//! Floats are written in shortest round-trip form, so reading a checkpoint
//! back reproduces every parameter bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{AblationVariant, Method, ModelParams, ModelSettings};
use crate::util::content_hash;

pub const CHECKPOINT_FORMAT: &str = "temporec-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub method: Method,
    pub variant: AblationVariant,
    pub seed: u64,
    /// Hash of the experiment the model was trained in.
    pub config_hash: String,
    pub settings: ModelSettings,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(
        method: Method,
        variant: AblationVariant,
        config_hash: impl Into<String>,
        settings: ModelSettings,
        params: ModelParams,
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            method,
            variant,
            seed: settings.train.seed,
            config_hash: config_hash.into(),
            settings,
            params,
        }
    }

    /// Hash of the settings alone, for models trained outside an experiment.
    pub fn settings_hash(settings: &ModelSettings) -> Result<String> {
        let text = serde_json::to_string(settings).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(content_hash(&[text]))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "not a checkpoint (format {:?})",
                ckpt.format
            )));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                ckpt.version
            )));
        }
        ckpt.params
            .validate()
            .map_err(|e| Error::Checkpoint(format!("inconsistent parameters: {e}")))?;
        Ok(ckpt)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
