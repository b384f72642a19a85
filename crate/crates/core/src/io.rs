//! Output formats: CSV, the `DFBM` binary matrix format and 16-bit PGM.
//!
//! CSV values use 17 significant digits so that they round-trip exactly,
//! `.` as decimal separator and LF line endings.
//!
//! A `DFBM` file is the magic `b"DFBM"`, the row and column counts as
//! little-endian `u32`, then the entries as little-endian `f64` in row-major
//! order.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DFBM_MAGIC: &[u8; 4] = b"DFBM";

/// One value formatted with 17 significant digits.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Rows of the matrix as comma-separated lines.
pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut s = String::with_capacity(m.len() * 24);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                s.push(',');
            }
            s.push_str(&format_value(m[(i, j)]));
        }
        s.push('\n');
    }
    s
}

/// One value per line.
pub fn vector_to_csv(v: &DVector<f64>) -> String {
    let mut s = String::with_capacity(v.len() * 24);
    for x in v.iter() {
        s.push_str(&format_value(*x));
        s.push('\n');
    }
    s
}

pub fn write_matrix_csv(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    Ok(fs::write(path, matrix_to_csv(m))?)
}

pub fn write_vector_csv(path: impl AsRef<Path>, v: &DVector<f64>) -> Result<()> {
    Ok(fs::write(path, vector_to_csv(v))?)
}

/// Parses comma-separated rows; blank lines are skipped.
pub fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("line {}: `{f}` is not a number", lineno + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Format(format!(
                    "line {}: {} columns, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    parse_matrix_csv(&fs::read_to_string(path)?)
}

/// Reads a single-column CSV.
pub fn read_vector_csv(path: impl AsRef<Path>) -> Result<DVector<f64>> {
    let m = read_matrix_csv(path)?;
    if m.ncols() > 1 {
        return Err(Error::Format(format!("expected one column, found {}", m.ncols())));
    }
    Ok(DVector::from_column_slice(m.as_slice()))
}

pub fn write_dfbm<W: Write>(mut w: W, m: &DMatrix<f64>) -> Result<()> {
    let rows = u32::try_from(m.nrows()).map_err(|_| Error::Format("too many rows for DFBM".into()))?;
    let cols = u32::try_from(m.ncols()).map_err(|_| Error::Format("too many columns for DFBM".into()))?;
    w.write_all(DFBM_MAGIC)?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dfbm<R: Read>(mut r: R) -> Result<DMatrix<f64>> {
    let mut head = [0u8; 12];
    r.read_exact(&mut head)
        .map_err(|_| Error::Format("DFBM header truncated".into()))?;
    if &head[..4] != DFBM_MAGIC {
        return Err(Error::Format("missing DFBM magic".into()));
    }
    let rows = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes")) as usize;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != rows * cols * 8 {
        return Err(Error::Format(format!(
            "DFBM payload has {} bytes, expected {}",
            payload.len(),
            rows * cols * 8
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn write_dfbm_file(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    write_dfbm(BufWriter::new(fs::File::create(path)?), m)
}

pub fn read_dfbm_file(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    read_dfbm(fs::File::open(path)?)
}

/// Linear map from the 16-bit samples back to data values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgmScale {
    pub min: f64,
    pub max: f64,
}

impl PgmScale {
    pub fn value(&self, sample: u16) -> f64 {
        self.min + (self.max - self.min) * sample as f64 / u16::MAX as f64
    }
}

/// Sidecar path holding the scale of a PGM image: `<image>.scale`.
pub fn pgm_sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".scale");
    PathBuf::from(s)
}

/// Binary 16-bit PGM of a grid given in pixel order `j = iy·n + ix`, with
/// `iy` growing upward; the image's top row is the last grid row. Values are
/// scaled min-to-max onto `0..=65535` and the scale goes to the sidecar.
pub fn write_pgm_grid(path: impl AsRef<Path>, values: &[f64], n: usize) -> Result<PgmScale> {
    if values.len() != n * n {
        return Err(Error::DimensionMismatch(format!(
            "{} values for a {n}×{n} image",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("image values must be finite".into()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let mut bytes = format!("P5\n{n} {n}\n65535\n").into_bytes();
    for row in (0..n).rev() {
        for col in 0..n {
            let v = values[row * n + col];
            let s = if span > 0.0 {
                ((v - min) / span * u16::MAX as f64).round() as u16
            } else {
                0
            };
            bytes.extend_from_slice(&s.to_be_bytes());
        }
    }
    let path = path.as_ref();
    fs::write(path, bytes)?;
    let scale = PgmScale { min, max };
    fs::write(
        pgm_sidecar_path(path),
        format!("min = {}\nmax = {}\n", format_value(min), format_value(max)),
    )?;
    Ok(scale)
}

/// Reads a binary 16-bit PGM: `(width, height, samples in file order)`.
pub fn read_pgm16(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u16>)> {
    let bytes = fs::read(path)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("PGM header truncated".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "65535" {
        return Err(Error::Format("not a 16-bit binary PGM".into()));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM size `{s}`")));
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let data = bytes.get(pos..).unwrap_or_default();
    if data.len() != w * h * 2 {
        return Err(Error::Format("PGM payload size mismatch".into()));
    }
    let samples = data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok((w, h, samples))
}
