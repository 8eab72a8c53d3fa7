//! Versioned JSON checkpoints. Reals are written as shortest round-trip
//! decimals, so identical models give identical bytes.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Head, HiddenLayer, ModelConfig, ModelParams, PhysicsParams};
use crate::autodiff::Matrix;
use crate::data::Normalizer;
use crate::error::{CheckpointError, Error, Result};

pub const CHECKPOINT_VERSION: &str = "1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format_version: String,
    config: ModelConfig,
    normalizer: Normalizer,
    physics: PhysicsParams,
    layers: LayersRecord,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayersRecord {
    hidden: Vec<HiddenRecord>,
    eda_head: HeadRecord,
    emotion_head: HeadRecord,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HiddenRecord {
    rows: usize,
    cols: usize,
    weight: Vec<f64>,
    bn_scale: Vec<f64>,
    bn_shift: Vec<f64>,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadRecord {
    weight: Vec<f64>,
    bias: f64,
}

fn row(v: &[f64]) -> Result<Matrix> {
    Matrix::from_vec(1, v.len(), v.to_vec())
}

impl CheckpointFile {
    fn from_params(p: &ModelParams) -> Self {
        let head = |h: &Head| HeadRecord {
            weight: h.weight.as_slice().to_vec(),
            bias: h.bias[(0, 0)],
        };
        Self {
            format_version: CHECKPOINT_VERSION.to_string(),
            config: p.config.clone(),
            normalizer: p.normalizer.clone(),
            physics: p.physics,
            layers: LayersRecord {
                hidden: p
                    .hidden
                    .iter()
                    .map(|l| HiddenRecord {
                        rows: l.weight.rows(),
                        cols: l.weight.cols(),
                        weight: l.weight.as_slice().to_vec(),
                        bn_scale: l.bn_scale.as_slice().to_vec(),
                        bn_shift: l.bn_shift.as_slice().to_vec(),
                        running_mean: l.running_mean.as_slice().to_vec(),
                        running_var: l.running_var.as_slice().to_vec(),
                    })
                    .collect(),
                eda_head: head(&p.eda_head),
                emotion_head: head(&p.emotion_head),
            },
        }
    }

    fn into_params(self) -> Result<ModelParams> {
        let hidden = self
            .layers
            .hidden
            .into_iter()
            .map(|h| {
                Ok(HiddenLayer {
                    weight: Matrix::from_vec(h.rows, h.cols, h.weight)?,
                    bn_scale: row(&h.bn_scale)?,
                    bn_shift: row(&h.bn_shift)?,
                    running_mean: row(&h.running_mean)?,
                    running_var: row(&h.running_var)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let head = |h: HeadRecord| -> Result<Head> {
            Ok(Head {
                weight: Matrix::from_vec(h.weight.len(), 1, h.weight)?,
                bias: Matrix::from_vec(1, 1, vec![h.bias])?,
            })
        };
        let params = ModelParams {
            config: self.config,
            hidden,
            eda_head: head(self.layers.eda_head)?,
            emotion_head: head(self.layers.emotion_head)?,
            physics: self.physics,
            normalizer: self.normalizer,
        };
        params.validate_shapes()?;
        params.normalizer.validate()?;
        Ok(params)
    }
}

/// Serialize to the checkpoint text format.
pub fn write_checkpoint(params: &ModelParams, out: &mut impl Write) -> Result<()> {
    let file = CheckpointFile::from_params(params);
    let mut text = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::contract(format!("checkpoint serialization failed: {e}")))?;
    text.push('\n');
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<checkpoint stream>", e))
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_checkpoint(params, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| CheckpointError::Unreadable {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CheckpointError::Unreadable {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    match value.get("format_version") {
        Some(serde_json::Value::String(v)) if v == CHECKPOINT_VERSION => {}
        Some(other) => {
            let found = match other {
                serde_json::Value::String(s) => s.clone(),
                v => v.to_string(),
            };
            return Err(CheckpointError::VersionMismatch {
                found,
                expected: CHECKPOINT_VERSION.into(),
            }
            .into());
        }
        None => {
            return Err(CheckpointError::SchemaMismatch("missing format_version".into()).into());
        }
    }
    let file: CheckpointFile = serde_json::from_value(value)
        .map_err(|e| CheckpointError::SchemaMismatch(e.to_string()))?;
    file.into_params().map_err(|e| match e {
        Error::Checkpoint(c) => Error::Checkpoint(c),
        other => CheckpointError::SchemaMismatch(other.to_string()).into(),
    })
}
