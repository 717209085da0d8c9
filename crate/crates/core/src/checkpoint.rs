//! Versioned JSON model checkpoints.
//!
//! Schema: `{version, architecture, layers, head}` where each layer is
//! `{rows, cols, weights, bias}` with flat row-major weights, `layers`
//! holds the feature layers followed by the classifier layer, and `head`
//! is `{kind, margin, temperature}` (`margin`/`temperature` only for the
//! normalized-margin head). Checkpoints represent the standard family:
//! ReLU hidden layers with a final linear projection into the head.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClassifierModel, HeadKind, ModelArch};
use crate::nn::{Activation, DenseLayer};
use crate::tensor::Matrix;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    architecture: ModelArch,
    layers: Vec<LayerRecord>,
    head: HeadRecord,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerRecord {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeadRecord {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
}

fn layer_record(layer: &DenseLayer<f64>) -> LayerRecord {
    LayerRecord {
        rows: layer.weights.rows(),
        cols: layer.weights.cols(),
        weights: layer.weights.as_slice().to_vec(),
        bias: layer.bias.clone(),
    }
}

fn dense_layer(record: &LayerRecord, path: &str, index: usize) -> Result<DenseLayer<f64>> {
    if record.bias.len() != record.rows {
        return Err(Error::Parse {
            path: path.into(),
            location: format!("layers[{index}]"),
            message: format!(
                "bias has {} entries for {} output rows",
                record.bias.len(),
                record.rows
            ),
        });
    }
    Ok(DenseLayer {
        weights: Matrix::from_vec(record.rows, record.cols, record.weights.clone())?,
        bias: record.bias.clone(),
    })
}

pub fn save_checkpoint(model: &ClassifierModel<f64>, path: impl AsRef<Path>) -> Result<()> {
    let head = match model.head() {
        HeadKind::Standard => HeadRecord {
            kind: "standard".into(),
            margin: None,
            temperature: None,
        },
        HeadKind::NormalizedMargin { margin, temperature } => HeadRecord {
            kind: "normalized_margin".into(),
            margin: Some(margin),
            temperature: Some(temperature),
        },
    };
    let mut layers: Vec<LayerRecord> = model
        .feature_layers()
        .iter()
        .map(|(layer, _)| layer_record(layer))
        .collect();
    layers.push(layer_record(model.head_layer()));
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        architecture: model.arch(),
        layers,
        head,
    };
    let json = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ClassifierModel<f64>> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Parse {
            path: display,
            location: "version".into(),
            message: format!(
                "unsupported checkpoint version {}, expected {CHECKPOINT_VERSION}",
                file.version
            ),
        });
    }
    let expected_layers = file.architecture.hidden_layers.len() + 1;
    if file.layers.len() != expected_layers {
        return Err(Error::Parse {
            path: display,
            location: "layers".into(),
            message: format!(
                "architecture describes {expected_layers} layers, file holds {}",
                file.layers.len()
            ),
        });
    }
    let head = match file.head.kind.as_str() {
        "standard" => HeadKind::Standard,
        "normalized_margin" => HeadKind::NormalizedMargin {
            margin: file.head.margin.ok_or_else(|| Error::Parse {
                path: display.clone(),
                location: "head.margin".into(),
                message: "missing for normalized_margin head".into(),
            })?,
            temperature: file.head.temperature.ok_or_else(|| Error::Parse {
                path: display.clone(),
                location: "head.temperature".into(),
                message: "missing for normalized_margin head".into(),
            })?,
        },
        other => {
            return Err(Error::Parse {
                path: display,
                location: "head.kind".into(),
                message: format!("unknown head kind `{other}`"),
            })
        }
    };
    let feature_count = file.layers.len() - 1;
    let mut feature_layers = Vec::with_capacity(feature_count);
    for (i, record) in file.layers[..feature_count].iter().enumerate() {
        let activation = if i + 1 == feature_count {
            Activation::Identity
        } else {
            Activation::Relu
        };
        feature_layers.push((dense_layer(record, &display, i)?, activation));
    }
    let head_layer = dense_layer(
        file.layers.last().expect("at least the head layer"),
        &display,
        file.layers.len() - 1,
    )?;
    let model = ClassifierModel::from_parts(feature_layers, head_layer, head)?;
    if model.arch() != file.architecture {
        return Err(Error::Parse {
            path: display,
            location: "architecture".into(),
            message: format!(
                "layer shapes imply {:?}, file declares {:?}",
                model.arch(),
                file.architecture
            ),
        });
    }
    Ok(model)
}
