use serde::{Deserialize, Serialize};

use super::{RegressorNet, TrainConfig};
use crate::error::{Error, Result};
use crate::manifest::RunManifest;

pub const CHECKPOINT_FORMAT: &str = "bodyfit-regressor";

/// `weights[i]` holds the outgoing weights of input unit `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// Trained net plus the configuration and provenance that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub manifest: RunManifest,
    pub grid_size: usize,
    pub granularity: usize,
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<LayerRecord>,
    pub config: TrainConfig,
    pub seed: u64,
}

impl Checkpoint {
    pub fn new(net: &RegressorNet<f64>, config: &TrainConfig, manifest: RunManifest) -> Self {
        let layers = (0..net.num_layers())
            .map(|l| {
                let (w, b) = net.layer_ranges(l);
                LayerRecord { weights: net.params()[w].chunks(net.sizes()[l + 1]).map(<[f64]>::to_vec).collect(), bias: net.params()[b].to_vec() }
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            manifest,
            grid_size: net.grid_size(),
            granularity: net.granularity(),
            layer_sizes: net.sizes().to_vec(),
            layers,
            config: config.clone(),
            seed: config.seed,
        }
    }

    pub fn net(&self) -> Result<RegressorNet<f64>> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("not a regressor checkpoint (format {:?})", self.format)));
        }
        if self.layers.len() + 1 != self.layer_sizes.len() {
            return Err(Error::Format("layer count disagrees with layer sizes".into()));
        }
        let mut params = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let (i, o) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            if layer.weights.len() != i || layer.weights.iter().any(|r| r.len() != o) || layer.bias.len() != o {
                return Err(Error::Format(format!("layer {l} does not have shape {i}×{o}")));
            }
            params.extend(layer.weights.iter().flatten());
            params.extend(&layer.bias);
        }
        RegressorNet::from_parts(self.grid_size, self.granularity, self.layer_sizes.clone(), params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
