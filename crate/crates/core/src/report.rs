//! Report emission: CSV tables and JSON documents that carry their own run
//! configuration, written atomically and byte-deterministically.
//!
//! CSV files start with a `# run_config: {...}` comment so a table can be
//! traced back to the exact invocation that produced it; JSON documents embed
//! the same object under a `run_config` key.

use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::fsio;

/// Canonical float formatting: shortest exact round-trip representation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// CSV-quote a field if it contains a comma, quote, or newline.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn compact(config: &Value, path: &Path) -> Result<String> {
    serde_json::to_string(config).map_err(|e| Error::format(path, e.to_string()))
}

/// Write a CSV with a leading `# run_config:` comment, a header row, and one
/// row per entry.
pub fn write_csv(
    path: &Path,
    run_config: &Value,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<()> {
    let mut text = format!("# run_config: {}\n", compact(run_config, path)?);
    text.push_str(&header.iter().map(|h| csv_field(h)).collect::<Vec<_>>().join(","));
    text.push('\n');
    for row in rows {
        text.push_str(&row.iter().map(|f| csv_field(f)).collect::<Vec<_>>().join(","));
        text.push('\n');
    }
    fsio::atomic_write(path, text.as_bytes())
}

/// Write a pretty-printed JSON document with `run_config` injected at the top
/// level. `value` must serialize to an object.
pub fn write_json(path: &Path, run_config: &Value, value: Value) -> Result<()> {
    let mut obj = match value {
        Value::Object(m) => m,
        other => {
            return Err(Error::format(
                path,
                format!("JSON report must be an object, got {other}"),
            ))
        }
    };
    obj.insert("run_config".into(), run_config.clone());
    let mut text = serde_json::to_string_pretty(&Value::Object(obj))
        .map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    fsio::atomic_write(path, text.as_bytes())
}

/// The resolved run config as its own artifact (`run_config.json`).
pub fn write_run_config(dir: &Path, run_config: &Value) -> Result<()> {
    let path = dir.join("run_config.json");
    let mut text = serde_json::to_string_pretty(run_config)
        .map_err(|e| Error::format(&path, e.to_string()))?;
    text.push('\n');
    fsio::atomic_write(&path, text.as_bytes())
}
