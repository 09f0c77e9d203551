//! JSONL dataset ingestion: one object per line, `{"id": ..., "text": ...}`.

use crate::error::{CemaError, Result};
use crate::text::{normalize_and_tokenize, Text};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct DatasetEntry {
    pub id: String,
    pub text: Text,
}

pub fn read_jsonl(path: &Path) -> Result<Vec<DatasetEntry>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(&line).map_err(|e| {
            CemaError::InvalidInput(format!("{path:?} line {}: {e}", lineno + 1))
        })?;
        let text = normalize_and_tokenize(&record.text).map_err(|_| {
            CemaError::InvalidInput(format!(
                "{path:?} line {}: empty text for id {:?}",
                lineno + 1,
                record.id
            ))
        })?;
        out.push(DatasetEntry {
            id: record.id,
            text,
        });
    }
    if out.is_empty() {
        return Err(CemaError::InvalidInput(format!("{path:?} holds no records")));
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::fs::File::create(path)?;
    for r in records {
        writeln!(file, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}
