//! Versioned JSON model files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Encoder, Lstm, Mlp, ModelConfig, ModelKind, Network, TrainConfig};
use crate::error::{Error, Result};
use crate::windowing::{FeatureSet, WindowConfig};

pub const CHECKPOINT_FORMAT: &str = "gapcast-model";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to rebuild a trained forecaster. Persistence
/// checkpoints carry no encoder or parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub feature_set: FeatureSet,
    pub model: ModelConfig,
    pub window: WindowConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub encoder: Option<Encoder>,
    pub params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    checkpoint: Checkpoint,
}

impl Checkpoint {
    pub fn network(&self) -> Result<Option<Network>> {
        let encoder = match (self.kind, &self.encoder) {
            (ModelKind::Persistence, _) => return Ok(None),
            (_, Some(e)) => e,
            (_, None) => return Err(Error::Format("checkpoint has no encoder".into())),
        };
        let params = self.params.clone();
        let net = match self.kind {
            ModelKind::Mlp => {
                let mut sizes = vec![encoder.input_len()];
                sizes.extend(&self.model.mlp_hidden);
                sizes.push(encoder.output_len());
                Network::Mlp(Mlp::from_params(sizes, params)?)
            }
            ModelKind::Lstm => Network::Lstm(Lstm::from_params(
                encoder.step_len(),
                self.model.lstm_hidden,
                encoder.output_len(),
                params,
            )?),
            ModelKind::Persistence => unreachable!(),
        };
        Ok(Some(net))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            checkpoint: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
                file.format, file.version
            )));
        }
        Ok(file.checkpoint)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
