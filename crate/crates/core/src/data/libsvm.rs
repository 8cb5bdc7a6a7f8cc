//! Sparse `label idx:val ...` text with 1-based ascending indices.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LibsvmTable {
    pub labels: Vec<f64>,
    /// Dense `N × n`; absent indices are zero.
    pub features: Matrix,
}

pub fn load_libsvm(path: impl AsRef<Path>, dim: Option<usize>) -> Result<LibsvmTable> {
    read_libsvm(std::fs::File::open(path.as_ref())?, dim)
}

/// Largest accepted feature index. Features are stored densely.
pub const MAX_LIBSVM_DIM: usize = 1 << 20;
const MAX_DENSE_CELLS: usize = 1 << 28;

/// Parses LIBSVM text. `dim` fixes the feature count; otherwise it is the
/// largest index seen.
pub fn read_libsvm<R: Read>(reader: R, dim: Option<usize>) -> Result<LibsvmTable> {
    if dim.is_some_and(|d| d > MAX_LIBSVM_DIM) {
        return Err(Error::invalid(format!(
            "dimension exceeds {MAX_LIBSVM_DIM}"
        )));
    }
    let mut labels = Vec::new();
    let mut sparse: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut max_index = 0;
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData => Error::parse(lineno, "invalid UTF-8"),
            _ => Error::Io(e),
        })?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut tokens = body.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label = label_tok
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::parse(lineno, format!("bad label {label_tok:?}")))?;
        let mut entries = Vec::new();
        let mut prev = 0;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| Error::parse(lineno, format!("expected idx:val, got {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad index {idx:?}")))?;
            if idx == 0 {
                return Err(Error::parse(lineno, "indices are 1-based"));
            }
            if idx > MAX_LIBSVM_DIM {
                return Err(Error::parse(
                    lineno,
                    format!("index {idx} exceeds {MAX_LIBSVM_DIM}"),
                ));
            }
            if idx <= prev {
                return Err(Error::parse(
                    lineno,
                    format!("index {idx} does not ascend past {prev}"),
                ));
            }
            let val = val
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(lineno, format!("bad value {val:?}")))?;
            if let Some(d) = dim {
                if idx > d {
                    return Err(Error::parse(
                        lineno,
                        format!("index {idx} exceeds dimension {d}"),
                    ));
                }
            }
            prev = idx;
            entries.push((idx - 1, val));
        }
        max_index = max_index.max(prev);
        labels.push(label);
        sparse.push(entries);
    }
    let n = dim.unwrap_or(max_index);
    if sparse.len().saturating_mul(n) > MAX_DENSE_CELLS {
        return Err(Error::invalid(format!(
            "{} rows x {n} features is too large to densify",
            sparse.len()
        )));
    }
    let mut features = Matrix::zeros(sparse.len(), n);
    for (r, entries) in sparse.iter().enumerate() {
        for &(c, v) in entries {
            features[(r, c)] = v;
        }
    }
    Ok(LibsvmTable { labels, features })
}

/// Canonical text: zeros omitted, reals in shortest round-trip form.
pub fn write_libsvm(table: &LibsvmTable) -> String {
    let mut out = String::new();
    for (label, row) in table.labels.iter().zip(table.features.iter_rows()) {
        write!(out, "{label}").unwrap();
        for (c, v) in row.iter().enumerate() {
            if *v != 0.0 {
                write!(out, " {}:{}", c + 1, v).unwrap();
            }
        }
        out.push('\n');
    }
    out
}
