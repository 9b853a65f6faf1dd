//! Segmentation masks: file formats, the granular decomposition, and a
//! synthetic segmenter for desk-scale data.
//!
//! The mask file format is JSON with uncompressed row-major run lengths:
//!
//! ```json
//! {"image_id": "img_0", "h": 10, "w": 10, "masks": [{"id": 1, "rle": [50, 50]}]}
//! ```
//!
//! Runs alternate off/on and always start with an off run (which may be 0).
//! 16-bit grayscale PNG label maps are also accepted; every nonzero gray
//! level becomes one mask whose id is that level.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_json;
use crate::tensor::Mask;

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMask {
    pub id: u32,
    pub mask: Mask,
    /// Recomputed from the pixels; never taken from input metadata.
    pub area_fraction: f64,
}

impl SegmentMask {
    pub fn new(id: u32, mask: Mask) -> Self {
        let area_fraction = mask.area_fraction();
        Self {
            id,
            mask,
            area_fraction,
        }
    }
}

/// All masks proposed for one image. Masks may overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub masks: Vec<SegmentMask>,
}

/// A non-overlapping decomposition: 0 is unassigned, `1..=segment_count` are
/// segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    pub segment_count: usize,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::MaskFormat(format!(
                "{} labels for a {height}x{width} map",
                labels.len()
            )));
        }
        let present: BTreeSet<u32> = labels.iter().copied().filter(|&l| l != 0).collect();
        let segment_count = present.len();
        if present
            .iter()
            .enumerate()
            .any(|(i, &l)| l as usize != i + 1)
        {
            return Err(Error::MaskFormat("segment ids must be dense 1..S".into()));
        }
        Ok(Self {
            height,
            width,
            labels,
            segment_count,
        })
    }

    /// Pixel mask of segment `id` (1-based).
    pub fn segment_mask(&self, id: u32) -> Mask {
        Mask::from_bits(
            self.height,
            self.width,
            self.labels.iter().map(|&l| l == id).collect(),
        )
        .expect("label map shape")
    }

    pub fn segment_area(&self, id: u32) -> f64 {
        self.labels.iter().filter(|&&l| l == id).count() as f64 / self.labels.len() as f64
    }

    /// Union of the given segments.
    pub fn union_mask(&self, ids: &[u32]) -> Mask {
        Mask::from_bits(
            self.height,
            self.width,
            self.labels.iter().map(|l| ids.contains(l)).collect(),
        )
        .expect("label map shape")
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RleFile {
    image_id: String,
    h: usize,
    w: usize,
    masks: Vec<RleMask>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RleMask {
    id: u32,
    rle: Vec<u64>,
}

pub fn encode_rle(mask: &Mask) -> Vec<u64> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u64;
    for &bit in &mask.bits {
        if bit == current {
            len += 1;
        } else {
            runs.push(len);
            current = bit;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

pub fn decode_rle(runs: &[u64], height: usize, width: usize) -> Result<Mask> {
    let total: u64 = runs
        .iter()
        .try_fold(0u64, |acc, &r| acc.checked_add(r))
        .ok_or_else(|| Error::MaskFormat("run lengths overflow".into()))?;
    if total != (height * width) as u64 {
        return Err(Error::MaskFormat(format!(
            "run lengths sum to {total} but the image has {} pixels",
            height * width
        )));
    }
    let mut bits = Vec::with_capacity(height * width);
    for (i, &r) in runs.iter().enumerate() {
        bits.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
    }
    Mask::from_bits(height, width, bits)
}

fn check_unique_ids(image_id: &str, masks: &[SegmentMask]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for m in masks {
        if !seen.insert(m.id) {
            return Err(Error::MaskFormat(format!(
                "{image_id}: duplicate mask id {}",
                m.id
            )));
        }
    }
    Ok(())
}

pub fn parse_rle_json(bytes: &[u8]) -> Result<MaskSet> {
    let file: RleFile = serde_json::from_slice(bytes)
        .map_err(|e| Error::MaskFormat(format!("RLE-JSON does not parse: {e}")))?;
    if file.h == 0 || file.w == 0 {
        return Err(Error::MaskFormat(format!(
            "{}: image size must be positive",
            file.image_id
        )));
    }
    let masks = file
        .masks
        .iter()
        .map(|m| {
            decode_rle(&m.rle, file.h, file.w)
                .map(|mask| SegmentMask::new(m.id, mask))
                .map_err(|e| Error::MaskFormat(format!("{}: mask {}: {e}", file.image_id, m.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    check_unique_ids(&file.image_id, &masks)?;
    Ok(MaskSet {
        image_id: file.image_id,
        height: file.h,
        width: file.w,
        masks,
    })
}

fn label_png_masks(path: &Path) -> Result<MaskSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let bad = |reason: String| Error::Image {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = decoder.read_info().map_err(|e| bad(e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(bad(format!(
            "label maps must be 16-bit grayscale, found {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![
        0u8;
        reader
            .output_buffer_size()
            .ok_or_else(|| bad("image too large".into()))?
    ];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| bad(e.to_string()))?;
    let values: Vec<u16> = buf[..frame.buffer_size()]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    let ids: BTreeSet<u16> = values.iter().copied().filter(|&v| v != 0).collect();
    let masks = ids
        .into_iter()
        .map(|id| {
            let mask = Mask::from_bits(h, w, values.iter().map(|&v| v == id).collect())
                .expect("png shape");
            SegmentMask::new(id as u32, mask)
        })
        .collect();
    let image_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(MaskSet {
        image_id,
        height: h,
        width: w,
        masks,
    })
}

/// Loads an RLE-JSON mask file or a 16-bit PNG label map (by extension).
pub fn load_masks(path: &Path) -> Result<MaskSet> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => label_png_masks(path),
        _ => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            parse_rle_json(&bytes).map_err(|e| match e {
                Error::MaskFormat(reason) => Error::Image {
                    path: path.to_path_buf(),
                    reason,
                },
                other => other,
            })
        }
    }
}

pub fn save_masks(path: &Path, ms: &MaskSet) -> Result<()> {
    let file = RleFile {
        image_id: ms.image_id.clone(),
        h: ms.height,
        w: ms.width,
        masks: ms
            .masks
            .iter()
            .map(|m| RleMask {
                id: m.id,
                rle: encode_rle(&m.mask),
            })
            .collect(),
    };
    write_json(path, &file)
}

/// Writes a label map as a 16-bit grayscale PNG.
pub fn save_label_png(path: &Path, map: &LabelMap) -> Result<()> {
    if map.segment_count > u16::MAX as usize {
        return Err(Error::MaskFormat(format!(
            "{} segments do not fit a 16-bit label map",
            map.segment_count
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), map.width as u32, map.height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Sixteen);
    let bad = |e: png::EncodingError| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut writer = encoder.write_header().map_err(bad)?;
    let data: Vec<u8> = map
        .labels
        .iter()
        .flat_map(|&l| (l as u16).to_be_bytes())
        .collect();
    writer.write_image_data(&data).map_err(bad)?;
    writer.finish().map_err(bad)
}

/// Builds the most granular decomposition from (possibly overlapping) masks.
///
/// Masks below `min_area_frac` are dropped. Every pixel covered by a
/// remaining mask goes to the smallest covering mask (ties to the lower mask
/// id); uncovered pixels stay 0. Surviving masks are renumbered `1..S` in
/// ascending source-id order.
pub fn select_granular(ms: &MaskSet, min_area_frac: f64) -> Result<LabelMap> {
    let n = ms.height * ms.width;
    for m in &ms.masks {
        if (m.mask.height, m.mask.width) != (ms.height, ms.width) {
            return Err(Error::MaskFormat(format!(
                "{}: mask {} is {}x{} in a {}x{} image",
                ms.image_id, m.id, m.mask.height, m.mask.width, ms.height, ms.width
            )));
        }
    }
    let mut kept: Vec<&SegmentMask> = ms
        .masks
        .iter()
        .filter(|m| m.area_fraction >= min_area_frac)
        .collect();
    kept.sort_by_key(|m| m.id);

    // Priority: smaller area first, then lower id.
    let mut by_priority: Vec<usize> = (0..kept.len()).collect();
    by_priority.sort_by(|&a, &b| {
        kept[a]
            .mask
            .count()
            .cmp(&kept[b].mask.count())
            .then(kept[a].id.cmp(&kept[b].id))
    });
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for &k in &by_priority {
        for (p, &bit) in kept[k].mask.bits.iter().enumerate() {
            if bit && owner[p].is_none() {
                owner[p] = Some(k);
            }
        }
    }

    // A mask fully shadowed by smaller ones owns no pixels and gets no id.
    let owning: BTreeSet<usize> = owner.iter().flatten().copied().collect();
    let mut compact = vec![0u32; kept.len()];
    for (new_id, &k) in owning.iter().enumerate() {
        compact[k] = new_id as u32 + 1;
    }
    let labels = owner.iter().map(|o| o.map_or(0, |k| compact[k])).collect();
    LabelMap::new(ms.height, ms.width, labels)
}

/// Synthetic tilings used in place of an external segmenter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmenterMode {
    Grid { rows: usize, cols: usize },
    Voronoi { sites: usize },
}

/// Non-overlapping masks tiling an `h × w` image, ids `1..`.
pub fn synthetic_segmenter(
    image_id: &str,
    height: usize,
    width: usize,
    mode: SegmenterMode,
    seed: u64,
) -> Result<MaskSet> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("image size must be positive".into()));
    }
    let labels: Vec<usize> = match mode {
        SegmenterMode::Grid { rows, cols } => {
            if rows == 0 || cols == 0 || rows > height || cols > width {
                return Err(Error::InvalidArgument(format!(
                    "grid {rows}x{cols} does not fit a {height}x{width} image"
                )));
            }
            (0..height * width)
                .map(|p| {
                    let (y, x) = (p / width, p % width);
                    (y * rows / height) * cols + x * cols / width
                })
                .collect()
        }
        SegmenterMode::Voronoi { sites } => {
            if sites == 0 || sites > height * width {
                return Err(Error::InvalidArgument(format!(
                    "{sites} voronoi sites for {} pixels",
                    height * width
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut chosen = BTreeSet::new();
            let mut points = Vec::with_capacity(sites);
            while points.len() < sites {
                let p = rng.random_range(0..height * width);
                if chosen.insert(p) {
                    points.push((p / width, p % width));
                }
            }
            (0..height * width)
                .map(|p| {
                    let (y, x) = ((p / width) as i64, (p % width) as i64);
                    let mut best = (i64::MAX, 0);
                    for (k, &(sy, sx)) in points.iter().enumerate() {
                        let d = (y - sy as i64).pow(2) + (x - sx as i64).pow(2);
                        if d < best.0 {
                            best = (d, k);
                        }
                    }
                    best.1
                })
                .collect()
        }
    };
    let count = labels.iter().max().map_or(0, |m| m + 1);
    let masks = (0..count)
        .map(|k| {
            let mask = Mask::from_bits(height, width, labels.iter().map(|&l| l == k).collect())
                .expect("shape");
            SegmentMask::new(k as u32 + 1, mask)
        })
        .filter(|m| m.mask.any())
        .collect();
    Ok(MaskSet {
        image_id: image_id.to_string(),
        height,
        width,
        masks,
    })
}

/// Mean segment count over the images.
pub fn segments_per_image_stats(maps: &[LabelMap]) -> Result<f64> {
    if maps.is_empty() {
        return Err(Error::InvalidArgument(
            "segment statistics need at least one image".into(),
        ));
    }
    Ok(maps.iter().map(|m| m.segment_count as f64).sum::<f64>() / maps.len() as f64)
}

/// Reads masks for `path` and reports them under `image_id` when the file
/// does not carry one (PNG label maps).
pub fn load_masks_for(path: &Path, image_id: &str) -> Result<MaskSet> {
    let mut ms = load_masks(path)?;
    if ms.image_id.is_empty() || path.extension().and_then(|e| e.to_str()) == Some("png") {
        ms.image_id = image_id.to_string();
    }
    Ok(ms)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(h: usize, w: usize, y0: usize, y1: usize, x0: usize, x1: usize) -> Mask {
        Mask::from_fn(h, w, |y, x| (y0..y1).contains(&y) && (x0..x1).contains(&x))
    }

    #[test]
    fn rle_half_mask() {
        let json = br#"{"image_id":"a","h":10,"w":10,"masks":[{"id":3,"rle":[50,50]}]}"#;
        let ms = parse_rle_json(json).unwrap();
        assert_eq!(ms.masks.len(), 1);
        assert_eq!(ms.masks[0].area_fraction, 0.5);
        assert!(!ms.masks[0].mask.get(4, 9));
        assert!(ms.masks[0].mask.get(5, 0));
    }

    #[test]
    fn empty_mask_list_is_valid() {
        let ms = parse_rle_json(br#"{"image_id":"a","h":4,"w":4,"masks":[]}"#).unwrap();
        assert!(ms.masks.is_empty());
    }

    #[test]
    fn rle_length_mismatch_is_rejected() {
        let err = parse_rle_json(br#"{"image_id":"a","h":4,"w":4,"masks":[{"id":1,"rle":[3,4]}]}"#)
            .unwrap_err();
        assert!(err.to_string().contains("sum to 7"), "{err}");
    }

    #[test]
    fn id_overflow_is_rejected() {
        let err = parse_rle_json(
            br#"{"image_id":"a","h":1,"w":1,"masks":[{"id":4294967296,"rle":[0,1]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::MaskFormat(_)));
    }

    #[test]
    fn rle_starting_with_an_on_pixel() {
        let m = Mask::from_bits(1, 4, vec![true, true, false, true]).unwrap();
        let runs = encode_rle(&m);
        assert_eq!(runs, vec![0, 2, 1, 1]);
        assert_eq!(decode_rle(&runs, 1, 4).unwrap(), m);
    }

    #[test]
    fn granular_threshold_keeps_masks_of_at_least_one_percent() {
        let (h, w) = (20, 100);
        // 0.5% = 10 px, 2% = 40 px, 30% = 600 px; all disjoint.
        let ms = MaskSet {
            image_id: "x".into(),
            height: h,
            width: w,
            masks: vec![
                SegmentMask::new(1, rect(h, w, 0, 1, 0, 10)),
                SegmentMask::new(2, rect(h, w, 2, 3, 0, 40)),
                SegmentMask::new(3, rect(h, w, 10, 16, 0, 100)),
            ],
        };
        let map = select_granular(&ms, 0.01).unwrap();
        assert_eq!(map.segment_count, 2);
        assert_eq!(map.segment_area(1), 0.02);
        assert_eq!(map.segment_area(2), 0.3);
        assert_eq!(map.labels[0], 0);
    }

    #[test]
    fn nested_masks_go_to_the_smaller_one() {
        let (h, w) = (10, 20);
        let big = rect(h, w, 0, 4, 0, 10); // 20%
        let small = rect(h, w, 1, 2, 1, 11); // 5%, partly outside big
        let ms = MaskSet {
            image_id: "x".into(),
            height: h,
            width: w,
            masks: vec![SegmentMask::new(7, big), SegmentMask::new(9, small.clone())],
        };
        let map = select_granular(&ms, 0.01).unwrap();
        for p in 0..h * w {
            if small.bits[p] {
                assert_eq!(map.labels[p], 2);
            }
        }
        assert_eq!(map.segment_count, 2);
    }

    #[test]
    fn equal_area_overlap_goes_to_lower_id() {
        let a = rect(4, 4, 0, 2, 0, 4);
        let b = rect(4, 4, 1, 3, 0, 4);
        let ms = MaskSet {
            image_id: "x".into(),
            height: 4,
            width: 4,
            masks: vec![SegmentMask::new(5, b), SegmentMask::new(2, a)],
        };
        let map = select_granular(&ms, 0.0).unwrap();
        assert_eq!(map.labels[4], 1); // row 1 overlap, source id 2 → compact 1
        assert_eq!(map.labels[8], 2);
    }

    #[test]
    fn grid_tiles_of_a_64_image() {
        let ms =
            synthetic_segmenter("g", 64, 64, SegmenterMode::Grid { rows: 4, cols: 4 }, 0).unwrap();
        let map = select_granular(&ms, 0.01).unwrap();
        assert_eq!(map.segment_count, 16);
        for id in 1..=16 {
            assert_eq!(map.segment_area(id), 0.0625);
        }
    }

    #[test]
    fn grid_2x2_on_8x8() {
        let ms =
            synthetic_segmenter("g", 8, 8, SegmenterMode::Grid { rows: 2, cols: 2 }, 0).unwrap();
        assert_eq!(ms.masks.len(), 4);
        assert!(ms.masks.iter().all(|m| m.mask.count() == 16));
    }

    #[test]
    fn voronoi_is_deterministic_and_partitions() {
        let a = synthetic_segmenter("v", 30, 40, SegmenterMode::Voronoi { sites: 5 }, 7).unwrap();
        let b = synthetic_segmenter("v", 30, 40, SegmenterMode::Voronoi { sites: 5 }, 7).unwrap();
        assert_eq!(a, b);
        let mut covered = vec![0usize; 30 * 40];
        for m in &a.masks {
            for (p, &bit) in m.mask.bits.iter().enumerate() {
                covered[p] += bit as usize;
            }
        }
        assert!(covered.iter().all(|&c| c == 1));
        let total: usize = a.masks.iter().map(|m| m.mask.count()).sum();
        assert_eq!(total, 30 * 40);
    }

    #[test]
    fn mean_segment_count() {
        let map = |s: u32| LabelMap::new(1, 20, (0..20).map(|p| (p % s) + 1).collect()).unwrap();
        assert_eq!(
            segments_per_image_stats(&[map(12), map(16), map(14)]).unwrap(),
            14.0
        );
        assert_eq!(segments_per_image_stats(&[map(7)]).unwrap(), 7.0);
        assert!(segments_per_image_stats(&[]).is_err());
    }

    #[test]
    fn label_map_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let ms = synthetic_segmenter("v", 16, 12, SegmenterMode::Voronoi { sites: 6 }, 3).unwrap();
        let map = select_granular(&ms, 0.0).unwrap();
        save_label_png(&path, &map).unwrap();
        let back = select_granular(&load_masks(&path).unwrap(), 0.0).unwrap();
        assert_eq!(back, map);
    }
}
