//! Persistence: the binary array container and CSV/JSON report writers.

mod container;

pub use container::{
    read_container, write_container, ArrayData, Container, DType, FormatError, NamedArray, MAGIC,
    VERSION,
};

use std::path::Path;

use serde::Serialize;

use crate::error::Result;

/// Writes `rows` as a headed CSV file.
pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
