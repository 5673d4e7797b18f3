//! Versioned JSON checkpoints.
//!
//! The on-disk schema is self-describing and decoupled from the in-memory
//! layout: layer matrices are stored as nested row-major arrays. JSON floats
//! are written in shortest round-trip form, so save → load reproduces every
//! parameter bit-for-bit.

use super::mlp::Mlp;
use super::{LrSettings, ModelParams};
use crate::descriptor::DescriptorConfig;
use crate::error::{Error, Result};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct MlpData {
    widths: Vec<usize>,
    /// weights[layer][row][col], row-major.
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointData {
    format_version: u32,
    descriptor: DescriptorConfig,
    lr: LrSettings,
    offsets: Vec<f64>,
    sr_head: MlpData,
    lr_head: MlpData,
}

fn mlp_to_data(mlp: &Mlp) -> MlpData {
    MlpData {
        widths: mlp.widths.clone(),
        weights: mlp
            .weights
            .iter()
            .map(|w| w.rows().into_iter().map(|r| r.to_vec()).collect())
            .collect(),
        biases: mlp.biases.iter().map(|b| b.to_vec()).collect(),
    }
}

fn mlp_from_data(data: MlpData, what: &str) -> Result<Mlp> {
    let bad = |msg: String| Error::Checkpoint(format!("{what}: {msg}"));
    if data.widths.len() < 2 {
        return Err(bad(format!("widths {:?} too short", data.widths)));
    }
    let n_layers = data.widths.len() - 1;
    if data.weights.len() != n_layers || data.biases.len() != n_layers {
        return Err(bad(format!(
            "expected {n_layers} weight/bias layers, got {}/{}",
            data.weights.len(),
            data.biases.len()
        )));
    }
    let mut weights = Vec::with_capacity(n_layers);
    let mut biases = Vec::with_capacity(n_layers);
    for (l, (w, b)) in data.weights.into_iter().zip(data.biases).enumerate() {
        let (rows, cols) = (data.widths[l + 1], data.widths[l]);
        if w.len() != rows || w.iter().any(|r| r.len() != cols) {
            return Err(bad(format!("layer {l} weight shape is not {rows}×{cols}")));
        }
        if b.len() != rows {
            return Err(bad(format!("layer {l} bias length is not {rows}")));
        }
        let flat: Vec<f64> = w.into_iter().flatten().collect();
        weights.push(
            Array2::from_shape_vec((rows, cols), flat)
                .map_err(|e| bad(format!("layer {l}: {e}")))?,
        );
        biases.push(Array1::from_vec(b));
    }
    let mlp = Mlp { widths: data.widths, weights, biases };
    mlp.validate().map_err(|e| bad(e.to_string()))?;
    Ok(mlp)
}

/// Serialize a model to checkpoint JSON.
pub fn render_checkpoint(params: &ModelParams) -> String {
    let data = CheckpointData {
        format_version: FORMAT_VERSION,
        descriptor: params.descriptor.clone(),
        lr: params.lr.clone(),
        offsets: params.offsets.clone(),
        sr_head: mlp_to_data(&params.sr_head),
        lr_head: mlp_to_data(&params.lr_head),
    };
    serde_json::to_string_pretty(&data).expect("checkpoint serialization cannot fail")
}

/// Parse checkpoint JSON, checking the format version and all shapes.
pub fn parse_checkpoint(text: &str) -> Result<ModelParams> {
    let data: CheckpointData = serde_json::from_str(text)
        .map_err(|e| Error::Checkpoint(format!("malformed JSON: {e}")))?;
    if data.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format_version {} (this build reads {})",
            data.format_version, FORMAT_VERSION
        )));
    }
    let params = ModelParams {
        descriptor: data.descriptor,
        lr: data.lr,
        offsets: data.offsets,
        sr_head: mlp_from_data(data.sr_head, "sr_head")?,
        lr_head: mlp_from_data(data.lr_head, "lr_head")?,
    };
    params.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, render_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    parse_checkpoint(&text)
}
