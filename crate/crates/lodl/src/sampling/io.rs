use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{InstanceSamples, SampleConfig, SampleTable};

/// Leading bytes of a sample table file; the trailing digit is the version.
pub const SAMPLE_MAGIC: &[u8; 8] = b"LODLSMP1";

#[derive(Debug, Error)]
pub enum SampleIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("header: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a sample table (bad leading bytes {got:?})")]
    Magic { got: Vec<u8> },
    #[error("file ends inside instance {index}")]
    Truncated { index: usize },
}

#[derive(Serialize, Deserialize)]
struct Header {
    domain: String,
    config: SampleConfig,
    n_instances: usize,
}

/// Binary layout: magic, little-endian u32 header length, JSON header, then
/// per instance `id: u64, dq_truth: f64, k * f64`, all little endian.
pub fn write_sample_table(path: &Path, table: &SampleTable) -> Result<(), SampleIoError> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(SAMPLE_MAGIC)?;
    let header = serde_json::to_vec(&Header {
        domain: table.domain.clone(),
        config: table.config.clone(),
        n_instances: table.instances.len(),
    })?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(&header)?;
    for row in &table.instances {
        debug_assert_eq!(row.dq.len(), table.config.k);
        out.write_all(&row.instance_id.to_le_bytes())?;
        out.write_all(&row.dq_truth.to_le_bytes())?;
        for &v in &row.dq {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_sample_table(path: &Path) -> Result<SampleTable, SampleIoError> {
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != SAMPLE_MAGIC {
        return Err(SampleIoError::Magic {
            got: magic.to_vec(),
        });
    }
    let mut len = [0u8; 4];
    input.read_exact(&mut len)?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    input.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    let mut instances = Vec::with_capacity(header.n_instances);
    let mut buf8 = [0u8; 8];
    for index in 0..header.n_instances {
        let fail = |_| SampleIoError::Truncated { index };
        input.read_exact(&mut buf8).map_err(fail)?;
        let instance_id = u64::from_le_bytes(buf8);
        input.read_exact(&mut buf8).map_err(fail)?;
        let dq_truth = f64::from_le_bytes(buf8);
        let mut dq = Vec::with_capacity(header.config.k);
        for _ in 0..header.config.k {
            input.read_exact(&mut buf8).map_err(fail)?;
            dq.push(f64::from_le_bytes(buf8));
        }
        instances.push(InstanceSamples {
            instance_id,
            dq_truth,
            dq,
        });
    }
    Ok(SampleTable {
        domain: header.domain,
        config: header.config,
        instances,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{PerturbStrategy, SampleConfig};
    use super::*;

    fn demo_table() -> SampleTable {
        SampleTable {
            domain: "linear".into(),
            config: SampleConfig {
                strategy: PerturbStrategy::All,
                alpha: 1.0,
                k: 3,
                seed: 5,
            },
            instances: vec![
                InstanceSamples {
                    instance_id: 0,
                    dq_truth: 3.5,
                    dq: vec![3.5, -0.25, 1.0 / 3.0],
                },
                InstanceSamples {
                    instance_id: 1,
                    dq_truth: 0.1,
                    dq: vec![0.1, 0.1, -2.0],
                },
            ],
        }
    }

    #[test]
    fn tables_round_trip_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.samples");
        let table = demo_table();
        write_sample_table(&path, &table).unwrap();
        assert_eq!(read_sample_table(&path).unwrap(), table);
    }

    #[test]
    fn reader_rejects_other_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.samples");
        std::fs::write(&path, b"LODLSMP9junkjunkjunk").unwrap();
        assert!(matches!(
            read_sample_table(&path),
            Err(SampleIoError::Magic { .. })
        ));
    }

    #[test]
    fn reader_reports_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.samples");
        write_sample_table(&path, &demo_table()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(
            read_sample_table(&path),
            Err(SampleIoError::Truncated { index: 1 })
        ));
    }
}
