//! One JSON object per line.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{FaarError, Result};

pub fn write_jsonl<T: Serialize>(mut w: impl Write, items: impl IntoIterator<Item = T>) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Blank lines are skipped; a malformed line reports its 1-based number.
pub fn read_jsonl<T: DeserializeOwned>(r: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| FaarError::HeaderMismatch(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}
