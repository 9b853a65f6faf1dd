//! Raw little-endian f32 files with JSON headers.
//!
//! A data file `name.f32` always travels with its header `name.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::tensor::Planes;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageHeader {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub dtype: String,
    pub endianness: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixHeader {
    pub rows: usize,
    pub dim: usize,
    pub dtype: String,
    pub endianness: String,
}

pub fn header_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("json")
}

pub fn f32_to_bytes(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

pub fn bytes_to_f32(path: &Path, bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Image {
            path: path.to_path_buf(),
            reason: format!("{} bytes is not a whole number of f32 values", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&text).map_err(|e| Error::json(path, e))
}

/// Pretty JSON with a trailing newline. Field order follows the type, so the
/// output is byte-stable.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push(b'\n');
    write_bytes(path, &text)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn check_dtype(path: &Path, dtype: &str, endianness: &str) -> Result<()> {
    if dtype != "f32" || endianness != "little" {
        return Err(Error::Image {
            path: path.to_path_buf(),
            reason: format!("unsupported encoding {dtype}/{endianness}, expected f32/little"),
        });
    }
    Ok(())
}

pub fn save_image(data_path: &Path, image: &Planes) -> Result<()> {
    let header = ImageHeader {
        channels: image.channels,
        height: image.height,
        width: image.width,
        dtype: "f32".into(),
        endianness: "little".into(),
    };
    write_json(&header_path(data_path), &header)?;
    write_bytes(data_path, &f32_to_bytes(image.data.iter().copied()))
}

pub fn load_image(data_path: &Path) -> Result<Planes> {
    let hp = header_path(data_path);
    let header: ImageHeader = read_json(&hp)?;
    check_dtype(&hp, &header.dtype, &header.endianness)?;
    let bytes = fs::read(data_path).map_err(|e| Error::io(data_path, e))?;
    let data = bytes_to_f32(data_path, &bytes)?;
    let expected = header.channels * header.height * header.width;
    if data.len() != expected {
        return Err(Error::Image {
            path: data_path.to_path_buf(),
            reason: format!(
                "header declares {expected} values but the file holds {}",
                data.len()
            ),
        });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Image {
            path: data_path.to_path_buf(),
            reason: "image contains non-finite values".into(),
        });
    }
    Planes::from_vec(header.channels, header.height, header.width, data)
}

/// Row-major f32 matrix sidecar.
pub fn save_matrix(data_path: &Path, m: &Matrix) -> Result<()> {
    let header = MatrixHeader {
        rows: m.nrows(),
        dim: m.ncols(),
        dtype: "f32".into(),
        endianness: "little".into(),
    };
    write_json(&header_path(data_path), &header)?;
    let values = (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)] as f32));
    write_bytes(data_path, &f32_to_bytes(values))
}

pub fn load_matrix(data_path: &Path) -> Result<Matrix> {
    let hp = header_path(data_path);
    let header: MatrixHeader = read_json(&hp)?;
    check_dtype(&hp, &header.dtype, &header.endianness)?;
    let bytes = fs::read(data_path).map_err(|e| Error::io(data_path, e))?;
    let data = bytes_to_f32(data_path, &bytes)?;
    if data.len() != header.rows * header.dim {
        return Err(Error::Image {
            path: data_path.to_path_buf(),
            reason: format!(
                "header declares {}x{} values but the file holds {}",
                header.rows,
                header.dim,
                data.len()
            ),
        });
    }
    Ok(Matrix::from_row_iterator(
        header.rows,
        header.dim,
        data.into_iter().map(f64::from),
    ))
}
