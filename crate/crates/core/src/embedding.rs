//! Per-segment feature vectors: every segment of a label map is pushed
//! through [`masked_forward`] on its own.

use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{load_matrix, save_matrix};
use crate::model::{masked_forward, MaskingMode, ModelGraph};
use crate::numerics::Matrix;
use crate::segment_ingest::LabelMap;
use crate::tensor::Planes;

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentEmbedding {
    pub image_id: String,
    pub segment_id: u32,
    pub area_fraction: f64,
    pub class_label: Option<usize>,
    pub phi: Vec<f64>,
}

/// One image of a dataset with its decomposition.
#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub image_id: String,
    pub class_label: Option<usize>,
    pub image: Planes,
    pub label_map: LabelMap,
}

/// Embeddings of one image in ascending segment id order.
pub fn embed_segments(
    g: &ModelGraph,
    image_id: &str,
    class_label: Option<usize>,
    image: &Planes,
    label_map: &LabelMap,
    mode: MaskingMode,
) -> Result<Vec<SegmentEmbedding>> {
    (1..=label_map.segment_count as u32)
        .map(|id| embed_one(g, image_id, class_label, image, label_map, id, mode))
        .collect()
}

fn embed_one(
    g: &ModelGraph,
    image_id: &str,
    class_label: Option<usize>,
    image: &Planes,
    label_map: &LabelMap,
    segment_id: u32,
    mode: MaskingMode,
) -> Result<SegmentEmbedding> {
    let mask = label_map.segment_mask(segment_id);
    let out = masked_forward(g, image, &mask, mode)?;
    if out.features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("non-finite feature vector".into()));
    }
    Ok(SegmentEmbedding {
        image_id: image_id.to_string(),
        segment_id,
        area_fraction: mask.area_fraction(),
        class_label,
        phi: out.features,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFailure {
    pub image_id: String,
    pub segment_id: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentTable {
    pub dim: usize,
    /// Sorted by `(image position in the dataset, segment_id)`.
    pub rows: Vec<SegmentEmbedding>,
}

impl SegmentTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Stacked `φ` rows of the selected table rows.
    pub fn feature_matrix(&self, rows: &[usize]) -> Matrix {
        Matrix::from_fn(rows.len(), self.dim, |r, c| self.rows[rows[r]].phi[c])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedDataset {
    pub table: SegmentTable,
    /// Segment count of every image, dataset order.
    pub segment_counts: Vec<usize>,
    /// Segments that could not be embedded and were left out of the table.
    pub failures: Vec<SegmentFailure>,
}

/// Embeds every segment of every image. The result does not depend on
/// `parallelism`; failed segments are reported in `failures` and logged.
pub fn embed_dataset(
    g: &ModelGraph,
    items: &[DatasetItem],
    mode: MaskingMode,
    parallelism: usize,
) -> Result<EmbeddedDataset> {
    if items.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot embed an empty dataset".into(),
        ));
    }
    let jobs: Vec<(usize, u32)> = items
        .iter()
        .enumerate()
        .flat_map(|(i, item)| (1..=item.label_map.segment_count as u32).map(move |s| (i, s)))
        .collect();
    let run = |&(i, s): &(usize, u32)| {
        let item = &items[i];
        embed_one(
            g,
            &item.image_id,
            item.class_label,
            &item.image,
            &item.label_map,
            s,
            mode,
        )
    };
    let results: Vec<Result<SegmentEmbedding>> =
        with_pool(parallelism, || jobs.par_iter().map(run).collect())?;

    let mut rows = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (&(i, s), r) in jobs.iter().zip(results) {
        match r {
            Ok(e) => rows.push(e),
            Err(e) => {
                warn!("dropping segment {s} of image {}: {e}", items[i].image_id);
                failures.push(SegmentFailure {
                    image_id: items[i].image_id.clone(),
                    segment_id: s,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(EmbeddedDataset {
        table: SegmentTable {
            dim: g.feature_dim(),
            rows,
        },
        segment_counts: items.iter().map(|i| i.label_map.segment_count).collect(),
        failures,
    })
}

/// Runs `f` on a dedicated rayon pool with `parallelism` threads (at least 1).
pub fn with_pool<T: Send>(parallelism: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {parallelism} worker threads: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentRow {
    row: usize,
    image_id: String,
    segment_id: u32,
    class: Option<usize>,
    area_fraction: f64,
}

/// Writes `segments.csv`-style metadata plus an f32 `φ` sidecar.
pub fn save_segment_table(csv_path: &Path, matrix_path: &Path, table: &SegmentTable) -> Result<()> {
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(csv_path).map_err(|e| Error::csv(csv_path, e))?;
    for (row, e) in table.rows.iter().enumerate() {
        w.serialize(SegmentRow {
            row,
            image_id: e.image_id.clone(),
            segment_id: e.segment_id,
            class: e.class_label,
            area_fraction: e.area_fraction,
        })
        .map_err(|e| Error::csv(csv_path, e))?;
    }
    w.flush().map_err(|e| Error::io(csv_path, e))?;
    let m = Matrix::from_fn(table.len(), table.dim, |r, c| table.rows[r].phi[c]);
    save_matrix(matrix_path, &m)
}

pub fn load_segment_table(csv_path: &Path, matrix_path: &Path) -> Result<SegmentTable> {
    let m = load_matrix(matrix_path)?;
    let mut r = csv::Reader::from_path(csv_path).map_err(|e| Error::csv(csv_path, e))?;
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize::<SegmentRow>().enumerate() {
        let rec = rec.map_err(|e| Error::csv(csv_path, e))?;
        if rec.row != i || i >= m.nrows() {
            return Err(Error::Image {
                path: csv_path.to_path_buf(),
                reason: format!("row {i} does not match the embedding sidecar"),
            });
        }
        rows.push(SegmentEmbedding {
            image_id: rec.image_id,
            segment_id: rec.segment_id,
            area_fraction: rec.area_fraction,
            class_label: rec.class,
            phi: m.row(i).iter().copied().collect(),
        });
    }
    if rows.len() != m.nrows() {
        return Err(Error::Image {
            path: csv_path.to_path_buf(),
            reason: format!("{} rows but the sidecar holds {}", rows.len(), m.nrows()),
        });
    }
    Ok(SegmentTable {
        dim: m.ncols(),
        rows,
    })
}
