use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::snapshot::FEATURE_NAMES;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Versioned JSON checkpoint: config, feature order, every tensor with its
/// shape, plus the selection results of the run that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub feature_names: Vec<String>,
    pub tensors: Vec<TensorRecord>,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub best_epoch: Option<usize>,
    #[serde(default)]
    pub val_auc: Option<f64>,
}

impl Checkpoint {
    pub fn from_params<T: Scalar>(config: &ModelConfig, params: &ModelParams<T>) -> Result<Self> {
        if params.kind() != config.kind {
            return Err(Error::Checkpoint(format!(
                "config is {} but parameters are {}",
                config.kind,
                params.kind()
            )));
        }
        let tensors = params
            .tensors()
            .into_iter()
            .map(|(name, shape, data)| TensorRecord {
                name,
                shape,
                data: data.iter().map(|v| v.to_f64().expect("finite scalar")).collect(),
            })
            .collect();
        Ok(Checkpoint {
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            tensors,
            threshold: None,
            best_epoch: None,
            val_auc: None,
        })
    }

    /// Rebuild parameters, checking every tensor's name and shape against the config.
    pub fn to_params<T: Scalar>(&self) -> Result<ModelParams<T>> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", self.version)));
        }
        if self.feature_names.len() != FEATURE_NAMES.len()
            || self.feature_names.iter().zip(FEATURE_NAMES).any(|(a, b)| a != b)
        {
            return Err(Error::Checkpoint("feature order differs from this build".into()));
        }
        let mut params = ModelParams::<T>::init(&self.config, 0)?;
        let expected: Vec<(String, Vec<usize>)> =
            params.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        if expected.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for (((name, shape), (_, slot)), rec) in expected.iter().zip(params.tensors_mut()).zip(&self.tensors) {
            if &rec.name != name || &rec.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` {:?} does not match expected `{name}` {shape:?}",
                    rec.name, rec.shape
                )));
            }
            if rec.data.len() != slot.len() {
                return Err(Error::Checkpoint(format!("tensor `{name}` has {} values", rec.data.len())));
            }
            for (dst, &src) in slot.iter_mut().zip(&rec.data) {
                if !src.is_finite() {
                    return Err(Error::Checkpoint(format!("tensor `{name}` holds a non-finite value")));
                }
                *dst = T::lit(src);
            }
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
