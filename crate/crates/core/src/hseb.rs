//! HSEB array files and plain-text label files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "HSEB1\n"   6 bytes magic
//! u32         N (rows)
//! u32         D (columns)
//! u8          dtype, 0 = f32, 1 = f64
//! N·D values  row-major, little-endian
//! ```
//!
//! Labels live in a separate text file with one integer per line.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Array;

pub const MAGIC: &[u8; 6] = b"HSEB1\n";
const HEADER_LEN: usize = 6 + 4 + 4 + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(Error::format(format!("unknown dtype code {other}"))),
        }
    }
}

impl std::str::FromStr for Dtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            other => Err(Error::Config(format!("dtype must be f32 or f64, got {other:?}"))),
        }
    }
}

/// Serializes an `N×D` matrix (any array viewed as a matrix over its last axis).
pub fn encode(array: &Array, dtype: Dtype) -> Result<Vec<u8>> {
    let (n, d) = array.matrix_dims();
    let n32 = u32::try_from(n).map_err(|_| Error::arg("too many rows for HSEB"))?;
    let d32 = u32::try_from(d).map_err(|_| Error::arg("too many columns for HSEB"))?;
    let mut out = Vec::with_capacity(HEADER_LEN + n * d * dtype.width());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&n32.to_le_bytes());
    out.extend_from_slice(&d32.to_le_bytes());
    out.push(dtype.code());
    for &v in array.data() {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    Ok(out)
}

/// Parses an HSEB buffer into an `N×D` array. The buffer length must match
/// the header exactly.
pub fn decode(bytes: &[u8]) -> Result<(Array, Dtype)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(format!(
            "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..6] != MAGIC {
        return Err(Error::format("bad magic, expected \"HSEB1\\n\""));
    }
    let n = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let d = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")) as usize;
    let dtype = Dtype::from_code(bytes[14])?;
    let body = &bytes[HEADER_LEN..];
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(dtype.width()))
        .ok_or_else(|| Error::format("header dimensions overflow"))?;
    if body.len() != expected {
        return Err(Error::format(format!(
            "header declares {n}x{d} values ({expected} bytes), body has {} bytes",
            body.len()
        )));
    }
    let data: Vec<f64> = match dtype {
        Dtype::F32 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        Dtype::F64 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    Ok((Array::from_vec(&[n, d], data)?, dtype))
}

pub fn read(path: &Path) -> Result<Array> {
    let bytes = fs::read(path)?;
    decode(&bytes)
        .map(|(a, _)| a)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

pub fn write(path: &Path, array: &Array, dtype: Dtype) -> Result<()> {
    fs::write(path, encode(array, dtype)?)?;
    Ok(())
}

/// One non-negative integer per line. A single trailing newline is allowed.
pub fn parse_labels(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            line.trim().parse::<usize>().map_err(|_| {
                Error::format(format!("label line {}: {:?} is not a class id", i + 1, line))
            })
        })
        .collect()
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    parse_labels(&fs::read_to_string(path)?)
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 3);
    for l in labels {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn handwritten_fixture_decodes_exactly() {
        let mut bytes = b"HSEB1\n".to_vec();
        bytes.extend_from_slice(&[3, 0, 0, 0, 2, 0, 0, 0, 1]);
        for v in [1.0f64, -2.0, 0.5, 0.25, 3.0, 1e-3] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let (a, dtype) = decode(&bytes).unwrap();
        assert_eq!(dtype, Dtype::F64);
        assert_eq!(a.shape(), &[3, 2]);
        assert_eq!(a.data(), &[1.0, -2.0, 0.5, 0.25, 3.0, 1e-3]);
    }

    #[test]
    fn f32_fixture_decodes() {
        let mut bytes = b"HSEB1\n".to_vec();
        bytes.extend_from_slice(&[1, 0, 0, 0, 2, 0, 0, 0, 0]);
        bytes.extend_from_slice(&1.5f32.to_le_bytes());
        bytes.extend_from_slice(&(-4.0f32).to_le_bytes());
        let (a, dtype) = decode(&bytes).unwrap();
        assert_eq!(dtype, Dtype::F32);
        assert_eq!(a.data(), &[1.5, -4.0]);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let a = Array::from_rows(&[[1.0, 2.0]]).unwrap();
        let mut bytes = encode(&a, Dtype::F64).unwrap();
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(decode(&wrong), Err(Error::Format(_))));
        bytes.pop();
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
        assert!(matches!(decode(&bytes[..4]), Err(Error::Format(_))));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let a = Array::from_rows(&[[1.0, 2.0]]).unwrap();
        let mut bytes = encode(&a, Dtype::F32).unwrap();
        bytes.push(0);
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn labels_parse() {
        assert_eq!(parse_labels("0\n3\n1\n").unwrap(), vec![0, 3, 1]);
        assert_eq!(parse_labels("2\n1").unwrap(), vec![2, 1]);
        assert!(parse_labels("1\n-1\n").is_err());
        assert!(parse_labels("1\n\n2\n").is_err());
    }
}
