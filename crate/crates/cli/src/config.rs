use std::path::Path;

use anyhow::{bail, Context};
use bodyfit::fitter::FitConfig;
use bodyfit::losses::AnnotationMask;
use bodyfit::regressor::TrainConfig;
use bodyfit::synth::DatasetSpec;
use serde::Deserialize;

/// Defaults read from `--config`, one table per command.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub gen: DatasetSpec,
    pub train: TrainConfig,
    pub fit: FitConfig,
    pub sweep: SweepSection,
    pub gradcheck: GradcheckSection,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub fractions: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { fractions: vec![1.0, 0.5, 0.2, 0.1, 0.0] }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub configs: usize,
    pub step: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        GradcheckSection { configs: 20, step: 1e-6 }
    }
}

/// Reads a `.json` file as JSON and anything else as TOML.
pub fn load(path: Option<&Path>) -> anyhow::Result<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(anyhow::Error::from)
    } else {
        toml::from_str(&text).map_err(anyhow::Error::from)
    };
    parsed.with_context(|| format!("parsing config {}", path.display()))
}

/// Parses `all` or a `+`/`,` separated list of `latent`, `3d`, `2d`.
pub fn parse_terms(spec: &str) -> anyhow::Result<AnnotationMask> {
    if spec.trim() == "all" {
        return Ok(AnnotationMask::ALL);
    }
    let mut mask = AnnotationMask::default();
    for name in spec.split(['+', ',']).map(str::trim) {
        match name {
            "latent" => mask.latent = true,
            "3d" => mask.joints_3d = true,
            "2d" => mask.joints_2d = true,
            other => bail!("unknown loss term {other:?} (expected latent, 3d, 2d or all)"),
        }
    }
    Ok(mask)
}
