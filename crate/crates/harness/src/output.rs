//! Output directory resolution and artifact writing.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::error::{HarnessError, Result};

/// Environment variable naming the output root.
pub const OUTPUT_ROOT_ENV: &str = "BACKSTEP_OUTPUT_ROOT";

pub const DEFAULT_OUTPUT_ROOT: &str = "backstep-output";

pub fn version_string() -> String {
    format!("backstep-harness {}", env!("CARGO_PKG_VERSION"))
}

/// Explicit path, else the environment variable, else the default.
pub fn output_root(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_OUTPUT_ROOT),
    }
}

/// Run directory `<root>/<name>`, created if missing.
pub fn run_dir(root: &Path, name: &str) -> Result<PathBuf> {
    let dir = root.join(name);
    std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    Ok(dir)
}

pub fn write_text(dir: &Path, file: &str, content: &str) -> Result<PathBuf> {
    let path = dir.join(file);
    std::fs::write(&path, content).map_err(|e| HarnessError::io(&path, e))?;
    Ok(path)
}

pub fn write_json(dir: &Path, file: &str, value: &Value) -> Result<PathBuf> {
    let text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    write_text(dir, file, &(text + "\n"))
}

/// Metadata record shared by every run.
pub fn metadata(command: &str, config: Value, results: Value) -> Value {
    json!({
        "command": command,
        "version": version_string(),
        "config": config,
        "results": results,
    })
}
