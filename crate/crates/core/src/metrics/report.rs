use std::path::Path;

use serde::Serialize;

use crate::assets::{write_atomic, AssetError};
use crate::error::Result;

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| AssetError::invariant(e.to_string()))?;
    write_atomic(path, (text + "\n").as_bytes())?;
    Ok(())
}

/// Writes flat records as CSV with a header row.
pub fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| AssetError::invariant(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| AssetError::invariant(e.to_string()))?;
    write_atomic(path, &bytes)?;
    Ok(())
}
