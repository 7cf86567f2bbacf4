//! Output files: CSV with a metadata comment line, pretty JSON, config hashes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::LabError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// SHA-256 of the compact JSON serialization of `config`, hex encoded.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("configs serialize");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// The comment line placed above every CSV header.
pub fn metadata_line(command: &str, hash: &str) -> String {
    format!("# gpae-lab {TOOL_VERSION} command={command} config_sha256={hash}")
}

/// Opens `path` for CSV output, writing the metadata comment line first.
/// Readers should skip lines starting with `#`.
pub fn csv_writer(path: &Path, command: &str, hash: &str) -> Result<csv::Writer<BufWriter<File>>, LabError> {
    let mut file = BufWriter::new(File::create(path).map_err(|e| LabError::io(path, e))?);
    writeln!(file, "{}", metadata_line(command, hash)).map_err(|e| LabError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Writes a serializable list of rows in one go.
pub fn write_csv<T: Serialize>(path: &Path, command: &str, hash: &str, rows: &[T]) -> Result<(), LabError> {
    let mut w = csv_writer(path, command, hash)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| LabError::io(path, e))?;
    Ok(())
}

/// Reads rows written by [`write_csv`].
pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, LabError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), LabError> {
    let mut file = BufWriter::new(File::create(path).map_err(|e| LabError::io(path, e))?);
    serde_json::to_writer_pretty(&mut file, value)?;
    writeln!(file).map_err(|e| LabError::io(path, e))?;
    file.flush().map_err(|e| LabError::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, serde::Deserialize, Debug, PartialEq)]
    struct Row {
        a: u32,
        b: Option<f64>,
    }

    #[test]
    fn csv_round_trip_skips_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let rows = vec![Row { a: 1, b: Some(0.5) }, Row { a: 2, b: None }];
        write_csv(&path, "test", "abc", &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# gpae-lab "));
        assert_eq!(text.lines().nth(1).unwrap(), "a,b");
        assert_eq!(read_csv::<Row>(&path).unwrap(), rows);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = config_hash(&Row { a: 1, b: None });
        assert_eq!(a.len(), 64);
        assert_eq!(a, config_hash(&Row { a: 1, b: None }));
        assert_ne!(a, config_hash(&Row { a: 2, b: None }));
    }
}
