//! Numeric CSV tables: comma separated, `.` decimal, optional header line.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Reads a rectangular numeric CSV. The first line is treated as a header
/// when any of its fields fails to parse as a number. Blank lines are skipped.
pub fn load_matrix_csv(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_matrix_csv(&text, path)
}

/// As [`load_matrix_csv`] on in-memory text; `path` is only used in errors.
pub fn parse_matrix_csv(text: &str, path: &Path) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Vec<Option<f64>> = fields.iter().map(|f| f.parse::<f64>().ok()).collect();
        if std::mem::take(&mut first) && parsed.iter().any(Option::is_none) {
            width = Some(fields.len());
            continue;
        }
        let expected = *width.get_or_insert(fields.len());
        if fields.len() != expected {
            return Err(Error::RaggedRows {
                path: path.to_path_buf(),
                line: i + 1,
                expected,
                found: fields.len(),
            });
        }
        for (col, (v, tok)) in parsed.iter().zip(&fields).enumerate() {
            match v {
                Some(v) if v.is_finite() => data.push(*v),
                _ => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: i + 1,
                        col: col + 1,
                        token: tok.to_string(),
                    })
                }
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::InvalidConfig(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    Matrix::new(rows, data.len() / rows, data)
}

/// Serializes with round-trip float formatting, one row per line.
pub fn matrix_to_csv(m: &Matrix, header: Option<&[&str]>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: impl AsRef<Path>, m: &Matrix, header: Option<&[&str]>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, matrix_to_csv(m, header)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
