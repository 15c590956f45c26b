//! CSV and JSON writers.
//!
//! Floats are written with Rust's shortest round-trip formatting, which is
//! locale independent and exact, so reruns compare byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use stark_echo::detection::EchoTrace;

use crate::HarnessError;

pub fn ensure_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.to_path_buf(), source })
}

/// Writes `rows` under `header`.
pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<PathBuf, HarnessError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
    Ok(path.to_path_buf())
}

/// `t_s, I, Q` trace file.
pub fn write_trace(path: &Path, trace: &EchoTrace) -> Result<PathBuf, HarnessError> {
    let rows = trace
        .times()
        .zip(&trace.amplitude)
        .map(|(t, a)| vec![t.to_string(), a.re.to_string(), a.im.to_string()]);
    write_csv(path, &["t_s", "I", "Q"], rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf, HarnessError> {
    let mut text = serde_json::to_string_pretty(value).expect("summary serialises");
    text.push('\n');
    fs::write(path, text).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
    Ok(path.to_path_buf())
}
