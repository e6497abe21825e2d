//! Model checkpoint files: one JSON document holding the architecture, the
//! training config that produced it, and the flat parameter tensors.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Model, ModelSpec, TrainConfig};
use crate::autodiff::Tensor;

pub const MODEL_FORMAT: &str = "lodl.model.v1";

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad model json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unrecognized model file format {got:?}, expected {expected:?}")]
    Format { expected: &'static str, got: String },
    #[error("parameter block {index} holds {got} values, architecture needs {expected}")]
    ParamShape {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("file holds {got} parameter blocks, architecture needs {expected}")]
    ParamCount { expected: usize, got: usize },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub spec: ModelSpec,
    /// Config snapshot of the run that produced the checkpoint, if any.
    pub train: Option<TrainConfig>,
    pub params: Vec<Vec<f64>>,
}

pub fn write_model(
    path: &Path,
    model: &Model,
    train: Option<&TrainConfig>,
) -> Result<(), ModelIoError> {
    let out = BufWriter::new(File::create(path)?);
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        spec: model.spec,
        train: train.copied(),
        params: model.params.iter().map(|t| t.data().to_vec()).collect(),
    };
    serde_json::to_writer(out, &file)?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<(ModelFile, Model), ModelIoError> {
    let file: ModelFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if file.format != MODEL_FORMAT {
        return Err(ModelIoError::Format {
            expected: MODEL_FORMAT,
            got: file.format,
        });
    }
    let shapes = file.spec.param_shapes();
    if shapes.len() != file.params.len() {
        return Err(ModelIoError::ParamCount {
            expected: shapes.len(),
            got: file.params.len(),
        });
    }
    let mut params = Vec::with_capacity(shapes.len());
    for (index, (shape, data)) in shapes.into_iter().zip(&file.params).enumerate() {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(ModelIoError::ParamShape {
                index,
                expected,
                got: data.len(),
            });
        }
        params.push(Tensor::new(shape, data.clone()).expect("shape matches data"));
    }
    let model = Model {
        spec: file.spec,
        params,
    };
    Ok((file, model))
}
