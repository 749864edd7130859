//! Append-only JSON-lines database of tuning records.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::TuningRecord;
use crate::error::{Error, Result};

pub const DB_VERSION: u32 = 1;

/// Appends records, one JSON object per line.
pub fn record_db(path: &Path, records: &[TuningRecord]) -> Result<()> {
    let mut buf = String::new();
    for r in records {
        buf.push_str(&serde_json::to_string(r).map_err(|e| Error::Malformed(e.to_string()))?);
        buf.push('\n');
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(buf.as_bytes())?;
    Ok(())
}

/// Reads every record; blank lines are skipped.
pub fn load_db(path: &Path) -> Result<Vec<TuningRecord>> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: TuningRecord =
            serde_json::from_str(&line).map_err(|e| Error::Malformed(format!("line {}: {e}", n + 1)))?;
        if r.v != DB_VERSION {
            return Err(Error::Malformed(format!("line {}: unsupported record version {}", n + 1, r.v)));
        }
        out.push(r);
    }
    Ok(out)
}
