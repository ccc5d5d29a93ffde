//! JSON checkpoints. Weights are row-major decimal arrays; `serde_json`
//! prints the shortest representation that parses back to the same `f64`,
//! so a save/load round trip is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{GcnModel, ModelDims, ModelTags};
use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::geoclass::{CellId, PlacePartition};
use crate::io::write_atomic;
use crate::numkit::Matrix;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Grid cell behind one class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMapping {
    pub label: usize,
    pub lat_index: i64,
    pub lon_index: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Weights {
    w1: Matrix,
    w2: Matrix,
    fc_weight: Matrix,
    fc_bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub dims: ModelDims,
    pub tags: ModelTags,
    pub train_config: TrainConfig,
    pub classes: Vec<ClassMapping>,
    /// Resolved run configuration, echoed for provenance.
    #[serde(default)]
    pub run_config: serde_json::Value,
    weights: Weights,
}

impl Checkpoint {
    pub fn new(
        model: &GcnModel,
        train_config: TrainConfig,
        classes: Vec<ClassMapping>,
        run_config: serde_json::Value,
    ) -> Result<Self> {
        if classes.len() != model.num_classes() {
            return Err(Error::Dimension {
                context: "checkpoint class mapping vs model classes",
                left: (classes.len(), 1),
                right: (model.num_classes(), 1),
            });
        }
        Ok(Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            dims: model.dims(),
            tags: model.tags.clone(),
            train_config,
            classes,
            run_config,
            weights: Weights {
                w1: model.w1.clone(),
                w2: model.w2.clone(),
                fc_weight: model.fc_weight.clone(),
                fc_bias: model.fc_bias.as_slice().to_vec(),
            },
        })
    }

    pub fn model(&self) -> Result<GcnModel> {
        let bias = Matrix::from_vec(1, self.weights.fc_bias.len(), self.weights.fc_bias.clone())?;
        let model = GcnModel::from_parts(
            self.weights.w1.clone(),
            self.weights.w2.clone(),
            self.weights.fc_weight.clone(),
            bias,
            self.tags.clone(),
        )?;
        if model.dims() != self.dims {
            return Err(Error::Dimension {
                context: "checkpoint dims vs weight shapes",
                left: (model.dims().input, model.dims().classes),
                right: (self.dims.input, self.dims.classes),
            });
        }
        Ok(model)
    }

    /// The checkpoint must describe exactly the partition's classes.
    pub fn check_partition(&self, partition: &PlacePartition) -> Result<()> {
        if self.dims.classes != partition.num_classes() {
            return Err(Error::Dimension {
                context: "checkpoint classes vs partition classes",
                left: (self.dims.classes, 1),
                right: (partition.num_classes(), 1),
            });
        }
        for m in &self.classes {
            let cell = CellId {
                lat_index: m.lat_index,
                lon_index: m.lon_index,
            };
            if partition.class_of(cell) != Some(m.label) {
                return Err(Error::Config(format!(
                    "checkpoint class {} ({}, {}) does not match the partition",
                    m.label, m.lat_index, m.lon_index
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("format_version").and_then(serde_json::Value::as_u64) {
            None => return Err(Error::Config("checkpoint has no format_version".into())),
            Some(v) if v != u64::from(CHECKPOINT_FORMAT_VERSION) => {
                return Err(Error::Config(format!(
                    "checkpoint format version {v} is not supported (expected {CHECKPOINT_FORMAT_VERSION})"
                )))
            }
            Some(_) => {}
        }
        let ckpt: Checkpoint = serde_json::from_value(value)?;
        ckpt.model()?;
        Ok(ckpt)
    }
}

pub fn class_mapping(partition: &PlacePartition) -> Vec<ClassMapping> {
    partition
        .classes()
        .iter()
        .map(|c| ClassMapping {
            label: c.label,
            lat_index: c.lat_index,
            lon_index: c.lon_index,
        })
        .collect()
}

pub fn save_model(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, ckpt.to_json()?.as_bytes())
}

pub fn load_model(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text).map_err(|e| Error::load(path, e))
}
