//! On-disk formats shared by the CLI and checkpoints.
//!
//! Matrices are headerless CSV, one row per line, LF endings, every field a
//! decimal float written in shortest round-trip form. A shift set is a
//! directory holding `shift_0.csv … shift_{m-1}.csv` and a `meta.json`
//! with `{dim, num_generators}`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asm::ShiftSet;
use crate::error::{Error, Result};
use crate::ncpoly::NcPolynomial;

pub fn format_matrix_csv(m: &DMatrix<f64>) -> String {
    let mut s = String::with_capacity(m.len() * 20);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                s.push(',');
            }
            s.push_str(&format!("{:?}", m[(i, j)]));
        }
        s.push('\n');
    }
    s
}

pub fn parse_matrix_csv(text: &str, source: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::parse(source, line_no, format!("bad field `{f}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::parse(
                    source,
                    line_no,
                    format!("expected {} fields, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix_csv(&text, &path.display().to_string())
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, format_matrix_csv(m)).map_err(|e| Error::io(path, e))
}

/// A signal is a single-column matrix file.
pub fn read_signal_csv(path: &Path) -> Result<DVector<f64>> {
    let m = read_matrix_csv(path)?;
    if m.ncols() > 1 && m.nrows() > 1 {
        return Err(Error::parse(
            path.display(),
            1,
            "a signal must be a single row or a single column",
        ));
    }
    Ok(DVector::from_iterator(m.len(), m.iter().copied()))
}

pub fn write_signal_csv(path: &Path, x: &DVector<f64>) -> Result<()> {
    write_matrix_csv(path, &DMatrix::from_column_slice(x.len(), 1, x.as_slice()))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct ShiftSetMeta {
    pub dim: usize,
    pub num_generators: usize,
}

pub fn write_shift_set(dir: &Path, s: &ShiftSet) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, m) in s.shifts().iter().enumerate() {
        write_matrix_csv(&dir.join(format!("shift_{i}.csv")), m)?;
    }
    let meta = ShiftSetMeta {
        dim: s.dim(),
        num_generators: s.num_generators(),
    };
    write_json(&dir.join("meta.json"), &meta)
}

pub fn read_shift_set(dir: &Path) -> Result<ShiftSet> {
    let meta: ShiftSetMeta = read_json(&dir.join("meta.json"))?;
    let mut shifts = Vec::with_capacity(meta.num_generators);
    for i in 0..meta.num_generators {
        let path = dir.join(format!("shift_{i}.csv"));
        let m = read_matrix_csv(&path)?;
        if m.nrows() != meta.dim || m.ncols() != meta.dim {
            return Err(Error::parse(
                path.display(),
                1,
                format!(
                    "expected a {0}x{0} matrix, found {1}x{2}",
                    meta.dim,
                    m.nrows(),
                    m.ncols()
                ),
            ));
        }
        shifts.push(m);
    }
    ShiftSet::new(shifts)
}

pub fn read_polynomial(path: &Path, num_generators: usize) -> Result<NcPolynomial> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    NcPolynomial::parse_named(&text, num_generators, &path.display().to_string())
}

pub fn write_polynomial(path: &Path, p: &NcPolynomial) -> Result<()> {
    fs::write(path, p.to_text()).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display(), e.line(), e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let m = DMatrix::from_row_slice(2, 3, &[0.1, -1e-300, 1.0 / 3.0, 2.5e17, 0.0, -7.0]);
        let text = format_matrix_csv(&m);
        assert!(!text.contains('\r'));
        assert_eq!(parse_matrix_csv(&text, "m").unwrap(), m);
    }

    #[test]
    fn malformed_csv_reports_line() {
        let err = parse_matrix_csv("1,2\n3,x\n", "bad.csv").unwrap_err();
        assert_eq!(err.to_string(), "bad.csv:2: bad field `x`: invalid float literal");
        let err = parse_matrix_csv("1,2\n3\n", "ragged.csv").unwrap_err();
        assert!(err.to_string().starts_with("ragged.csv:2:"));
    }

    #[test]
    fn shift_set_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = ShiftSet::new(vec![
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]),
        ])
        .unwrap();
        write_shift_set(dir.path(), &s).unwrap();
        let meta: ShiftSetMeta = read_json(&dir.path().join("meta.json")).unwrap();
        assert_eq!(
            meta,
            ShiftSetMeta {
                dim: 2,
                num_generators: 2
            }
        );
        assert_eq!(read_shift_set(dir.path()).unwrap(), s);
    }
}

/// SHA-256 of `bytes`, hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
