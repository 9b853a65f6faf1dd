use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::concept_model::{ConceptSpace, DroppedDirection};
use crate::error::{Error, Result};
use crate::io::{load_matrix, read_json};
use crate::numerics::{Matrix, Vector};

pub const SPACE_FORMAT: &str = "conceptspace-space";

/// One row of `clusters_<group>.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    /// Row of `segments.csv`.
    pub row_id: usize,
    pub image_id: String,
    pub segment_id: u32,
    /// Concept index, or `residual` for rows in the residual pool.
    pub cluster: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletenessRow {
    pub class: String,
    pub clusters: usize,
    pub completeness: f64,
}

/// One segment of `scores.csv`: its assigned concept with that concept's
/// activation and relevance (the complement's for residual segments).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub image_id: String,
    pub segment_id: u32,
    pub class: usize,
    pub concept_id: String,
    /// Empty when the feature vector is zero.
    pub activation: Option<f64>,
    pub relevance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub direction: String,
    pub step: usize,
    pub mean_occluded_fraction: f64,
    pub accuracy: f64,
    pub n_images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassCompleteness {
    pub class: usize,
    pub completeness: f64,
    /// `‖wˡ‖²/‖w‖²`, complement last.
    pub per_concept: Vec<f64>,
}

/// JSON header of a persisted concept space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceHeader {
    pub format: String,
    pub group: String,
    pub classes: Vec<usize>,
    pub dim: usize,
    pub n_concepts: usize,
    pub concept_dims: Vec<usize>,
    pub complement_dim: usize,
    pub captured_variance: Vec<f64>,
    pub condition: f64,
    pub dropped: Vec<DroppedDirection>,
    /// Block of every column of the basis file, complement = `n_concepts`.
    pub owner: Vec<usize>,
    /// Member means, centered mode only.
    pub means: Option<Vec<Vec<f64>>>,
    /// Basis file name, relative to the header.
    pub basis: String,
    pub completeness: Vec<ClassCompleteness>,
}

pub(crate) fn write_csv<T: Serialize>(
    path: &Path,
    rows: impl IntoIterator<Item = T>,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::csv(path, e)))
        .collect()
}

/// Reads a concept space written by `score`.
pub fn load_space(header_path: &Path) -> Result<(SpaceHeader, ConceptSpace)> {
    let header: SpaceHeader = read_json(header_path)?;
    let bad = |reason: String| Error::Image {
        path: header_path.to_path_buf(),
        reason,
    };
    if header.format != SPACE_FORMAT {
        return Err(bad(format!(
            "format is {:?}, expected {SPACE_FORMAT:?}",
            header.format
        )));
    }
    let dir = header_path.parent().unwrap_or(Path::new(""));
    let full: Matrix = load_matrix(&dir.join(&header.basis))?;
    if full.nrows() != header.dim || header.captured_variance.len() != header.n_concepts {
        return Err(bad("header does not match the basis file".into()));
    }
    let meta = (0..header.n_concepts)
        .map(|l| (l, header.captured_variance[l]))
        .collect();
    let mut space =
        ConceptSpace::from_parts(meta, full, header.owner.clone(), header.dropped.clone())
            .map_err(|e| bad(e.to_string()))?;
    if space.concept_dims() != header.concept_dims {
        return Err(bad(
            "concept dimensions do not match the column owners".into()
        ));
    }
    if let Some(means) = &header.means {
        if means.len() != header.n_concepts || means.iter().any(|m| m.len() != header.dim) {
            return Err(bad("means do not match the space".into()));
        }
        for (b, m) in space.bases.iter_mut().zip(means) {
            b.mean = Some(Vector::from_column_slice(m));
        }
    }
    Ok((header, space))
}

/// Distinct colors for concept overlays; index 0 is "no concept".
pub(crate) fn palette(n: usize) -> Vec<[u8; 3]> {
    const BASE: [[u8; 3]; 10] = [
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
        [210, 245, 60],
        [250, 190, 212],
    ];
    let mut out = vec![[0, 0, 0]];
    out.extend((0..n).map(|i| BASE[i % BASE.len()]));
    out
}

/// 8-bit indexed PNG of `indices` (row-major, `height × width`).
pub(crate) fn write_indexed_png(
    path: &Path,
    width: usize,
    height: usize,
    indices: &[u8],
    colors: &[[u8; 3]],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_palette(colors.iter().flatten().copied().collect::<Vec<u8>>());
    let fail = |e: png::EncodingError| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut w = enc.write_header().map_err(fail)?;
    w.write_image_data(indices).map_err(fail)?;
    w.finish().map_err(fail)
}
