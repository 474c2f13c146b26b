//! JSON model documents.
//!
//! Parameters are stored as `f64` and printed with shortest round-trip
//! formatting, so a reload reproduces every weight bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    /// `"qr"` or `"ensemble_member"`.
    pub kind: String,
    pub layer_dims: Vec<usize>,
    pub n_a: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_s: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_u: Option<usize>,
    pub seed: u64,
    pub alpha: f64,
    /// Per-feature multipliers applied to `[state | low_input]` before the network.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_scale: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<String>,
}

/// One layer: `w[out][in]` and `b[out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub meta: ModelMeta,
    pub weights: Vec<LayerRecord>,
}

impl ModelFile {
    pub fn from_mlp<T: Scalar>(model: &Mlp<T>, meta: ModelMeta) -> Self {
        let weights = model
            .layers()
            .iter()
            .map(|layer| LayerRecord {
                w: layer
                    .weights
                    .chunks_exact(layer.in_dim)
                    .map(|row| row.iter().map(|w| w.to_f64_lossy()).collect())
                    .collect(),
                b: layer.bias.iter().map(|b| b.to_f64_lossy()).collect(),
            })
            .collect();
        ModelFile { meta, weights }
    }

    pub fn to_mlp<T: Scalar>(&self) -> Result<Mlp<T>> {
        let params = self
            .weights
            .iter()
            .map(|layer| {
                let w = layer.w.iter().flatten().map(|&v| T::from_f64_lossy(v)).collect();
                let b = layer.b.iter().map(|&v| T::from_f64_lossy(v)).collect();
                (w, b)
            })
            .collect();
        Mlp::from_parameters(&self.meta.layer_dims, params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.meta.kind == kind {
            Ok(())
        } else {
            Err(Error::Format(format!(
                "expected a {kind:?} model, found {:?}",
                self.meta.kind
            )))
        }
    }
}
