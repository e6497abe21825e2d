use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Dataset, DomainConfig, Instance};

/// Format tag written into every dataset file; bumped on breaking changes.
pub const DATASET_FORMAT: &str = "lodl.dataset.v1";

#[derive(Debug, Error)]
pub enum DataIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported dataset format {got:?} (this build reads {expected:?})")]
    Format { expected: &'static str, got: String },
    #[error("file ends after {got} of {expected} instances")]
    Truncated { expected: usize, got: usize },
}

/// First line of a dataset file; instances follow one per line.
#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    seed: u64,
    config: DomainConfig,
    n_instances: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q: Option<Vec<f64>>,
}

/// Writes a dataset as JSON lines: a header, then one instance per line.
/// Floats are printed by the shortest round-trip rule, so reading the file
/// back reproduces every value bit for bit.
pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<(), DataIoError> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = Header {
        format: DATASET_FORMAT.to_string(),
        seed: dataset.seed,
        config: dataset.config.clone(),
        n_instances: dataset.instances.len(),
        q: dataset.q.clone(),
    };
    let encode = |line: usize, r: serde_json::Result<String>| {
        r.map_err(|source| DataIoError::Json { line, source })
    };
    writeln!(out, "{}", encode(1, serde_json::to_string(&header))?)?;
    for (i, inst) in dataset.instances.iter().enumerate() {
        writeln!(out, "{}", encode(i + 2, serde_json::to_string(inst))?)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DataIoError> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let first = lines.next().transpose()?.unwrap_or_default();
    let header: Header = serde_json::from_str(&first)
        .map_err(|source| DataIoError::Json { line: 1, source })?;
    if header.format != DATASET_FORMAT {
        return Err(DataIoError::Format {
            expected: DATASET_FORMAT,
            got: header.format,
        });
    }
    let mut instances: Vec<Instance> = Vec::with_capacity(header.n_instances);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        instances.push(
            serde_json::from_str(&line).map_err(|source| DataIoError::Json {
                line: i + 2,
                source,
            })?,
        );
    }
    if instances.len() != header.n_instances {
        return Err(DataIoError::Truncated {
            expected: header.n_instances,
            got: instances.len(),
        });
    }
    Ok(Dataset {
        config: header.config,
        seed: header.seed,
        instances,
        q: header.q,
    })
}
