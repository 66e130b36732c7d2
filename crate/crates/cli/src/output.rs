//! Writers for reports. Every file carries the configuration hash.

use std::path::Path;

use serde::Serialize;

use crate::error::CliError;

/// A JSON document with the configuration hash as its first field.
#[derive(Debug, Serialize)]
pub struct Stamped<'a, T: Serialize> {
    pub config_hash: &'a str,
    #[serde(flatten)]
    pub body: &'a T,
}

pub fn write_json<T: Serialize>(path: &Path, hash: &str, body: &T) -> Result<(), CliError> {
    let doc = Stamped {
        config_hash: hash,
        body,
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Adds a top-level `config_hash` to a model artifact header written by
/// the core library. The blob checksum is unaffected.
pub fn stamp_artifact(path: &Path, hash: &str) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("artifact {} is not JSON: {e}", path.display())))?;
    if let Some(obj) = value.as_object_mut() {
        obj.insert("config_hash".into(), serde_json::Value::String(hash.to_string()));
    }
    let mut text = serde_json::to_string_pretty(&value).expect("artifact serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Writes `rows` as CSV with a header taken from the row type's fields.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row)
            .map_err(|e| CliError::io(path, std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
