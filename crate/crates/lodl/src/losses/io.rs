//! Fitted-loss files: a JSON header line, then one JSON line per instance.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FitConfig, FittedLoss, LossKind};

pub const LOSS_FORMAT: &str = "lodl.losses.v1";

#[derive(Debug, Error)]
pub enum LossIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad json on line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("unrecognized loss file format {got:?}, expected {expected:?}")]
    Format { expected: &'static str, got: String },
    #[error("loss file truncated: header promised {expected} losses, found {got}")]
    Truncated { expected: usize, got: usize },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossFile {
    pub format: String,
    pub domain: String,
    pub kind: LossKind,
    pub fit: FitConfig,
    pub n_losses: usize,
}

pub fn write_fitted_losses(
    path: &Path,
    domain: &str,
    kind: LossKind,
    fit: &FitConfig,
    losses: &[FittedLoss],
) -> Result<(), LossIoError> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = LossFile {
        format: LOSS_FORMAT.to_string(),
        domain: domain.to_string(),
        kind,
        fit: fit.clone(),
        n_losses: losses.len(),
    };
    serde_json::to_writer(&mut out, &header).map_err(|source| LossIoError::Json { line: 1, source })?;
    out.write_all(b"\n")?;
    for (i, loss) in losses.iter().enumerate() {
        serde_json::to_writer(&mut out, loss).map_err(|source| LossIoError::Json {
            line: i + 2,
            source,
        })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_fitted_losses(path: &Path) -> Result<(LossFile, Vec<FittedLoss>), LossIoError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| LossIoError::Truncated { expected: 1, got: 0 })?;
    let header: LossFile = serde_json::from_str(&first?).map_err(|source| LossIoError::Json {
        line: 1,
        source,
    })?;
    if header.format != LOSS_FORMAT {
        return Err(LossIoError::Format {
            expected: LOSS_FORMAT,
            got: header.format,
        });
    }
    let mut losses = Vec::with_capacity(header.n_losses);
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let loss: FittedLoss = serde_json::from_str(&line).map_err(|source| LossIoError::Json {
            line: idx + 1,
            source,
        })?;
        losses.push(loss);
    }
    if losses.len() != header.n_losses {
        return Err(LossIoError::Truncated {
            expected: header.n_losses,
            got: losses.len(),
        });
    }
    Ok((header, losses))
}
