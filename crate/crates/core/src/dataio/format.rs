//! Raw binary feature and label files.
//!
//! Feature matrix: `"FWF1"`, `u32` rows, `u32` cols, then `rows × cols`
//! `f32` values, row-major. Label file: `"FWL1"`, `u32` length, then one
//! `i8` per frame. All integers and floats are little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::DataError;
use crate::numcore::Matrix;

pub const MATRIX_MAGIC: &[u8; 4] = b"FWF1";
pub const LABELS_MAGIC: &[u8; 4] = b"FWL1";

/// Highest valid class label; `-1` marks an unannotated frame.
pub const MAX_LABEL: i8 = 7;

pub fn encode_matrix(m: &Matrix<f32>, out: &mut Vec<u8>) {
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Decodes one matrix starting at `bytes[*pos]`, advancing `pos` past it.
/// `path` is only used for error messages.
pub fn decode_matrix(bytes: &[u8], pos: &mut usize, path: &Path) -> Result<Matrix<f32>, DataError> {
    let start = *pos;
    let magic = take(bytes, pos, 4, path)?;
    if magic != MATRIX_MAGIC {
        return Err(DataError::format(path, start as u64, "bad magic, expected FWF1"));
    }
    let rows = read_u32(bytes, pos, path)? as usize;
    let cols = read_u32(bytes, pos, path)? as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| DataError::format(path, (start + 4) as u64, "matrix size overflows"))?;
    let payload = bytes.len().saturating_sub(*pos);
    if payload / 4 < n {
        return Err(DataError::format(
            path,
            bytes.len() as u64,
            format!("truncated: header declares {rows}×{cols} floats, {payload} payload bytes present"),
        ));
    }
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let offset = *pos;
        let v = f32::from_le_bytes(take(bytes, pos, 4, path)?.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(DataError::format(path, offset as u64, "non-finite feature value"));
        }
        data.push(v);
    }
    Ok(Matrix::from_vec(rows, cols, data).expect("length checked"))
}

pub fn write_matrix(path: &Path, m: &Matrix<f32>) -> Result<(), DataError> {
    let mut buf = Vec::with_capacity(12 + 4 * m.len());
    encode_matrix(m, &mut buf);
    write_all(path, &buf)
}

pub fn read_matrix(path: &Path) -> Result<Matrix<f32>, DataError> {
    let bytes = read_all(path)?;
    let mut pos = 0;
    let m = decode_matrix(&bytes, &mut pos, path)?;
    if pos != bytes.len() {
        return Err(DataError::format(path, pos as u64, "trailing bytes after matrix payload"));
    }
    Ok(m)
}

pub fn write_labels(path: &Path, labels: &[i8]) -> Result<(), DataError> {
    let mut buf = Vec::with_capacity(8 + labels.len());
    buf.extend_from_slice(LABELS_MAGIC);
    buf.extend_from_slice(&(labels.len() as u32).to_le_bytes());
    buf.extend(labels.iter().map(|&l| l as u8));
    write_all(path, &buf)
}

pub fn read_labels(path: &Path) -> Result<Vec<i8>, DataError> {
    let bytes = read_all(path)?;
    let mut pos = 0;
    let magic = take(&bytes, &mut pos, 4, path)?;
    if magic != LABELS_MAGIC {
        return Err(DataError::format(path, 0, "bad magic, expected FWL1"));
    }
    let len = read_u32(&bytes, &mut pos, path)? as usize;
    if bytes.len() - pos != len {
        return Err(DataError::format(
            path,
            bytes.len() as u64,
            format!("header declares {len} labels, {} bytes present", bytes.len() - pos),
        ));
    }
    let labels: Vec<i8> = bytes[pos..].iter().map(|&b| b as i8).collect();
    if let Some(frame) = labels.iter().position(|&l| !(-1..=MAX_LABEL).contains(&l)) {
        return Err(DataError::Label {
            path: path.to_path_buf(),
            frame,
            offset: (pos + frame) as u64,
            value: labels[frame],
        });
    }
    Ok(labels)
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize, path: &Path) -> Result<&'a [u8], DataError> {
    if bytes.len() < *pos + n {
        return Err(DataError::format(path, *pos as u64, "unexpected end of file"));
    }
    let s = &bytes[*pos..*pos + n];
    *pos += n;
    Ok(s)
}

pub(crate) fn read_u32(bytes: &[u8], pos: &mut usize, path: &Path) -> Result<u32, DataError> {
    Ok(u32::from_le_bytes(take(bytes, pos, 4, path)?.try_into().expect("4 bytes")))
}

pub(crate) fn read_all(path: &Path) -> Result<Vec<u8>, DataError> {
    let mut f = fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).map_err(|e| DataError::io(path, e))?;
    Ok(buf)
}

pub(crate) fn write_all(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| DataError::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    f.write_all(bytes).map_err(|e| DataError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_matrix_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.fwf");
        let m = Matrix::from_rows(&[[1.0f32, 2.0], [3.0, 4.0]]);
        let mut buf = Vec::new();
        encode_matrix(&m, &mut buf);
        buf.truncate(buf.len() - 3);
        std::fs::write(&p, &buf).unwrap();
        let err = read_matrix(&p).unwrap_err().to_string();
        assert!(err.contains("truncated") && err.contains("m.fwf"), "{err}");
    }

    #[test]
    fn bad_label_reports_frame() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.fwl");
        write_labels(&p, &[0, 1, -1, 8, 2]).unwrap();
        match read_labels(&p).unwrap_err() {
            DataError::Label { frame, offset, value, .. } => {
                assert_eq!((frame, offset, value), (3, 11, 8));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.fwf");
        std::fs::write(&p, b"NOPE\0\0\0\0\0\0\0\0").unwrap();
        assert!(read_matrix(&p).unwrap_err().to_string().contains("magic"));
    }
}
