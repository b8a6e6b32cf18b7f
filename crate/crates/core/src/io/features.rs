use std::path::Path;
use std::str::FromStr;

use super::write_atomic;
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

pub const BINARY_MAGIC: &[u8; 4] = b"SSDF";
pub const BINARY_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 4 + 4;

/// On-disk layout of a feature matrix.
///
/// CSV: one row per line, comma-separated decimals, `#` lines ignored.
/// Binary: `SSDF`, version byte, `n` and `d` as u32 LE, then `n·d` f64 LE row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Csv,
    Binary,
}

impl FeatureFormat {
    /// `.bin` and `.ssdf` are binary; everything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("bin") || ext.eq_ignore_ascii_case("ssdf") => {
                Self::Binary
            }
            _ => Self::Csv,
        }
    }
}

impl FromStr for FeatureFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "binary" | "bin" => Ok(Self::Binary),
            other => Err(Error::InvalidParameter(format!(
                "unknown feature format {other:?} (expected csv or binary)"
            ))),
        }
    }
}

/// Loads an f64 matrix, choosing the format from the file extension.
pub fn load_features(path: impl AsRef<Path>) -> Result<Matrix<f64>> {
    let path = path.as_ref();
    load_features_as(path, FeatureFormat::from_path(path))
}

pub fn load_features_as<T: Scalar>(path: &Path, format: FeatureFormat) -> Result<Matrix<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_features(path, &bytes, format)
}

/// Parses in-memory file contents; `path` only labels errors.
pub fn read_features<T: Scalar>(path: &Path, bytes: &[u8], format: FeatureFormat) -> Result<Matrix<T>> {
    let values = match format {
        FeatureFormat::Csv => parse_csv(path, bytes)?,
        FeatureFormat::Binary => parse_binary(path, bytes)?,
    };
    let (rows, cols, data) = values;
    Matrix::from_vec(rows, cols, data.into_iter().map(T::lit).collect())
}

type Parsed = (usize, usize, Vec<f64>);

fn parse_csv(path: &Path, bytes: &[u8]) -> Result<Parsed> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    })?;
    let mut cols: Option<usize> = None;
    let mut rows = 0;
    let mut data = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let start = data.len();
        for (c, token) in line.split(',').enumerate() {
            let token = token.trim();
            let v: f64 = token.parse().map_err(|_| Error::ParseFloat {
                path: path.to_path_buf(),
                line: line_no,
                column: c + 1,
                token: token.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteCsv {
                    path: path.to_path_buf(),
                    line: line_no,
                    column: c + 1,
                });
            }
            data.push(v);
        }
        let found = data.len() - start;
        match cols {
            None => cols = Some(found),
            Some(expected) if expected != found => {
                return Err(Error::RaggedRow {
                    path: path.to_path_buf(),
                    line: line_no,
                    expected,
                    found,
                })
            }
            Some(_) => {}
        }
        rows += 1;
    }
    Ok((rows, cols.unwrap_or(0), data))
}

fn parse_binary(path: &Path, bytes: &[u8]) -> Result<Parsed> {
    let truncated = |expected: usize| Error::Truncated {
        path: path.to_path_buf(),
        offset: bytes.len(),
        expected,
    };
    if bytes.len() < 4 {
        return Err(truncated(HEADER_LEN));
    }
    if &bytes[..4] != BINARY_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(HEADER_LEN));
    }
    if bytes[4] != BINARY_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version: bytes[4],
        });
    }
    let n = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let d = u32::from_le_bytes(bytes[9..13].try_into().expect("4 bytes")) as usize;
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(8))
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::InvalidParameter(format!("{}: header shape {n}x{d} overflows", path.display())))?;
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes {
            path: path.to_path_buf(),
            offset: expected,
            extra: bytes.len() - expected,
        });
    }
    let mut data = Vec::with_capacity(n * d);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        if !v.is_finite() {
            return Err(Error::NonFiniteBinary {
                path: path.to_path_buf(),
                offset: HEADER_LEN + 8 * i,
            });
        }
        data.push(v);
    }
    Ok((n, d, data))
}

/// Serializes a matrix. CSV uses shortest round-trip decimals.
pub fn write_features<T: Scalar>(matrix: &Matrix<T>, format: FeatureFormat) -> Result<Vec<u8>> {
    match format {
        FeatureFormat::Csv => {
            let mut out = String::new();
            for row in matrix.row_iter() {
                let line: Vec<String> = row.iter().map(|v| v.as_f64().to_string()).collect();
                out.push_str(&line.join(","));
                out.push('\n');
            }
            Ok(out.into_bytes())
        }
        FeatureFormat::Binary => {
            let dim = |v: usize| {
                u32::try_from(v).map_err(|_| {
                    Error::InvalidParameter(format!("dimension {v} exceeds the binary format limit"))
                })
            };
            let mut out = Vec::with_capacity(HEADER_LEN + 8 * matrix.as_slice().len());
            out.extend_from_slice(BINARY_MAGIC);
            out.push(BINARY_VERSION);
            out.extend_from_slice(&dim(matrix.rows())?.to_le_bytes());
            out.extend_from_slice(&dim(matrix.cols())?.to_le_bytes());
            for v in matrix.as_slice() {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
            Ok(out)
        }
    }
}

/// Atomically writes a matrix in the given format.
pub fn save_features<T: Scalar>(matrix: &Matrix<T>, path: impl AsRef<Path>, format: FeatureFormat) -> Result<()> {
    write_atomic(path.as_ref(), &write_features(matrix, format)?)
}
