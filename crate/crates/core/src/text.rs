//! Shared helpers for the tab-separated file formats.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// 17 significant digits; parses back to the identical `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn parse_f64(field: &str, origin: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::format(origin, line, format!("expected a number, got {field:?}")))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Yields `(line_number, fields)` for non-empty lines that are not `#` comments.
pub(crate) fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| (i + 1, l.split('\t').collect()))
}

/// Checks the first record against the expected column names.
pub(crate) fn expect_header(
    fields: Option<(usize, Vec<&str>)>,
    expected: &[&str],
    origin: &str,
) -> Result<()> {
    match fields {
        Some((_, f)) if f == expected => Ok(()),
        Some((line, f)) => Err(Error::format(
            origin,
            line,
            format!(
                "expected header {:?}, got {:?}",
                expected.join("\t"),
                f.join("\t")
            ),
        )),
        None => Err(Error::format(origin, 0, "file is empty")),
    }
}
