//! Generated models and datasets for tests, demos and desk-scale runs.
//!
//! * [`zoo_graph`]: small random CNNs covering every layer kind.
//! * [`planted_flip_setup`]: a model whose features are linear in disjoint
//!   image regions, with closed-form concept relevances.
//! * [`desk_dataset`] and [`desk_model`]: a two-class shapes dataset (red
//!   disks versus blue squares on noisy gray) and a hand-built classifier
//!   with a third "nothing here" output.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::concept_model::{build_space, ClassHead, ConceptBasis, ConceptSpace};
use crate::defaults;
use crate::embedding::DatasetItem;
use crate::error::Result;
use crate::model::{BatchNorm, Conv2d, Layer, Linear, MaxPool, ModelGraph, ResidualBlock};
use crate::numerics::{Matrix, Vector};
use crate::segment_ingest::{
    select_granular, synthetic_segmenter, LabelMap, MaskSet, SegmenterMode,
};
use crate::tensor::Planes;

fn gaussian(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f32> {
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| normal.sample(rng) as f32).collect()
}

fn random_conv(
    rng: &mut ChaCha8Rng,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Conv2d {
    let fan_in = (cin * k * k) as f64;
    Conv2d {
        in_channels: cin,
        out_channels: cout,
        kernel: (k, k),
        stride,
        padding,
        weight: gaussian(rng, cout * cin * k * k, (2.0 / fan_in).sqrt()),
        bias: gaussian(rng, cout, 0.1),
    }
}

fn random_bn(rng: &mut ChaCha8Rng, c: usize) -> BatchNorm {
    BatchNorm {
        channels: c,
        gamma: (0..c).map(|_| rng.random_range(0.5..1.5)).collect(),
        beta: gaussian(rng, c, 0.1),
        running_mean: gaussian(rng, c, 0.1),
        running_var: (0..c).map(|_| rng.random_range(0.5..2.0)).collect(),
        eps: 1e-5,
    }
}

fn random_linear(rng: &mut ChaCha8Rng, d: usize, k: usize) -> Linear {
    Linear {
        in_features: d,
        out_features: k,
        weight: gaussian(rng, d * k, (1.0 / d as f64).sqrt()),
        bias: gaussian(rng, k, 0.1),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZooArch {
    /// conv → relu → GAP → linear
    Plain,
    /// leading batchnorm, two conv stages, max pooling
    Pooled,
    /// a residual block with a projection shortcut and one identity block
    Residual,
}

impl ZooArch {
    pub const ALL: [ZooArch; 3] = [ZooArch::Plain, ZooArch::Pooled, ZooArch::Residual];
}

/// Random 3 × 16 × 16 classifier with three outputs.
pub fn zoo_graph(arch: ZooArch, seed: u64) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let d = match arch {
        ZooArch::Plain => {
            layers.push(Layer::Conv2d(random_conv(&mut rng, 3, 6, 3, 1, 1)));
            layers.push(Layer::Relu);
            6
        }
        ZooArch::Pooled => {
            layers.push(Layer::BatchNorm(random_bn(&mut rng, 3)));
            layers.push(Layer::Conv2d(random_conv(&mut rng, 3, 6, 5, 1, 2)));
            layers.push(Layer::BatchNorm(random_bn(&mut rng, 6)));
            layers.push(Layer::Relu);
            layers.push(Layer::MaxPool(MaxPool {
                kernel: 2,
                stride: 2,
                padding: 0,
            }));
            layers.push(Layer::Conv2d(random_conv(&mut rng, 6, 8, 3, 1, 1)));
            layers.push(Layer::Relu);
            8
        }
        ZooArch::Residual => {
            layers.push(Layer::Conv2d(random_conv(&mut rng, 3, 6, 3, 1, 1)));
            layers.push(Layer::Relu);
            layers.push(Layer::Residual(ResidualBlock {
                main: vec![
                    Layer::Conv2d(random_conv(&mut rng, 6, 8, 3, 2, 1)),
                    Layer::BatchNorm(random_bn(&mut rng, 8)),
                    Layer::Relu,
                    Layer::Conv2d(random_conv(&mut rng, 8, 8, 3, 1, 1)),
                ],
                projection: Some(vec![Layer::Conv2d(random_conv(&mut rng, 6, 8, 1, 2, 0))]),
            }));
            layers.push(Layer::Relu);
            layers.push(Layer::Residual(ResidualBlock {
                main: vec![
                    Layer::Conv2d(random_conv(&mut rng, 8, 8, 3, 1, 1)),
                    Layer::Relu,
                    Layer::Conv2d(random_conv(&mut rng, 8, 8, 3, 1, 1)),
                ],
                projection: None,
            }));
            layers.push(Layer::Relu);
            8
        }
    };
    layers.push(Layer::GlobalAvgPool);
    layers.push(Layer::Linear(random_linear(&mut rng, d, 3)));
    ModelGraph::new([3, 16, 16], vec![0.5; 3], layers).expect("zoo graphs are valid")
}

pub fn random_image(channels: usize, height: usize, width: usize, seed: u64) -> Planes {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..channels * height * width)
        .map(|_| rng.random_range(0.0..1.0))
        .collect();
    Planes::from_vec(channels, height, width, data).expect("shape")
}

/// A planted flipping problem with closed-form answers.
pub struct PlantedSetup {
    pub model: ModelGraph,
    pub items: Vec<DatasetItem>,
    pub space: ConceptSpace,
    pub head: ClassHead,
    /// Head weight along the first direction of each concept.
    pub alpha: Vec<f64>,
    /// Bias of the competing class; class 0 is predicted while its logit
    /// is at least this.
    pub threshold: f64,
    /// `relevance[i][l]`: the exact contribution of concept `l` to the class-0
    /// logit of image `i`, computed from the image construction alone.
    pub relevance: Vec<Vec<f64>>,
}

/// `n_concepts ≤ 5` concepts, each owning one vertical strip per image.
///
/// Concept `l` is the plane spanned by columns `2l` and `2l + 1` of a random
/// orthogonal matrix `U`. The image has two channels per concept; strip `l`
/// carries the constant pair `mₗ(cos θₗ, sin θₗ)` in channels `2l, 2l + 1`
/// and zeros elsewhere, with `θₗ` spread evenly over ±75° across the images,
/// and a background strip is zero. A 1 × 1 convolution maps channel `i` onto
/// `uᵢ`, so after pooling `φ = Σₗ mₗ·areaₗ·(cos θₗ·u₂ₗ + sin θₗ·u₂ₗ₊₁)`.
/// Class 0 has weights `Σₗ αₗu₂ₗ`; class 1 has zero weights and a bias
/// threshold. With the inpainting mode and a zero fill, hiding a strip
/// removes exactly its term, so concept `l` contributes
/// `αₗ·mₗ·cos θₗ·areaₗ` to the class-0 logit.
pub fn planted_flip_setup(n_concepts: usize, n_images: usize, seed: u64) -> Result<PlantedSetup> {
    assert!(
        (1..=5).contains(&n_concepts),
        "planted setups have 1 to 5 concepts"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_concepts;
    let channels = 2 * n;
    let d = channels + 2;
    let (h, w) = (8, 6 * (n + 1));

    let gauss = Matrix::from_fn(d, d, |_, _| Normal::new(0.0, 1.0).unwrap().sample(&mut rng));
    let u = gauss.qr().q();
    let alpha: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..2.0)).collect();

    let conv_weight: Vec<f32> = (0..d)
        .flat_map(|o| (0..channels).map(move |i| (o, i)))
        .map(|(o, i)| u[(o, i)] as f32)
        .collect();
    let head_w: Vector = (0..n).fold(Vector::zeros(d), |acc, l| acc + u.column(2 * l) * alpha[l]);
    // Angle slot of every image, shuffled independently per concept.
    let slots: Vec<Vec<usize>> = (0..n)
        .map(|_| {
            let mut s: Vec<usize> = (0..n_images).collect();
            s.shuffle(&mut rng);
            s
        })
        .collect();

    // Per-image strips and values; the threshold sits below every full logit.
    let mut layouts = Vec::with_capacity(n_images);
    for i in 0..n_images {
        let mut widths: Vec<usize> = (0..=n).map(|_| rng.random_range(2..=10)).collect();
        let total: usize = widths.iter().sum();
        // Rescale widths to fill the image exactly.
        let mut acc = 0;
        for wd in widths.iter_mut().take(n) {
            *wd = (*wd * w / total).max(1);
            acc += *wd;
        }
        widths[n] = w - acc;
        let mut order: Vec<usize> = (0..=n).collect();
        order.shuffle(&mut rng);
        let values: Vec<(f64, f64)> = (0..n)
            .map(|l| {
                let m: f64 = rng.random_range(0.5..1.5);
                let theta = (-1.0 + 2.0 * (slots[l][i] as f64 + 0.5) / n_images as f64)
                    * 5.0
                    * std::f64::consts::PI
                    / 12.0;
                (m * theta.cos(), m * theta.sin())
            })
            .collect();
        layouts.push((widths, order, values));
    }

    let mut items = Vec::with_capacity(n_images);
    let mut relevance = Vec::with_capacity(n_images);
    let mut min_logit = f64::INFINITY;
    for (idx, (widths, order, values)) in layouts.iter().enumerate() {
        let mut image = Planes::zeros(channels, h, w);
        let mut labels = vec![0u32; h * w];
        let mut x0 = 0;
        let mut rel = vec![0.0; n];
        for &strip in order {
            let x1 = x0 + widths[strip];
            for y in 0..h {
                for x in x0..x1 {
                    // Segment ids follow strip ids so that the label map is dense.
                    labels[y * w + x] = strip as u32 + 1;
                    if strip < n {
                        image.set(2 * strip, y, x, values[strip].0 as f32);
                        image.set(2 * strip + 1, y, x, values[strip].1 as f32);
                    }
                }
            }
            if strip < n {
                let area = (widths[strip] * h) as f64 / (h * w) as f64;
                rel[strip] = alpha[strip] * (values[strip].0 as f32 as f64) * area;
            }
            x0 = x1;
        }
        min_logit = min_logit.min(rel.iter().sum());
        relevance.push(rel);
        items.push(DatasetItem {
            image_id: format!("planted_{idx:03}"),
            class_label: Some(0),
            image,
            label_map: LabelMap::new(h, w, labels)?,
        });
    }
    let typical: f64 =
        relevance.iter().map(|r| r.iter().sum::<f64>()).sum::<f64>() / n_images as f64;
    let threshold = (0.5 * typical).min(min_logit - 1e-3);

    let layers = vec![
        Layer::Conv2d(Conv2d {
            in_channels: channels,
            out_channels: d,
            kernel: (1, 1),
            stride: 1,
            padding: 0,
            weight: conv_weight,
            bias: vec![0.0; d],
        }),
        Layer::GlobalAvgPool,
        Layer::Linear(Linear {
            in_features: d,
            out_features: 2,
            weight: head_w
                .iter()
                .map(|&v| v as f32)
                .chain(std::iter::repeat_n(0.0, d))
                .collect(),
            bias: vec![0.0, threshold as f32],
        }),
    ];
    let model = ModelGraph::new([channels, h, w], vec![0.0; channels], layers)?;
    let bases = (0..n)
        .map(|l| ConceptBasis {
            concept_id: l,
            basis: u.columns(2 * l, 2).into_owned(),
            captured_variance: 1.0,
            mean: None,
        })
        .collect();
    let space = build_space(bases, d, defaults::COND_CAP)?;
    let head = ClassHead::from_model(&model, 0)?;
    Ok(PlantedSetup {
        model,
        items,
        space,
        head,
        alpha,
        threshold: threshold as f32 as f64,
        relevance,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeskSample {
    pub image_id: String,
    pub class: usize,
    pub image: Planes,
    pub masks: MaskSet,
}

pub const DESK_SIZE: usize = 64;
pub const DESK_CLASSES: [&str; 3] = ["red_disk", "blue_square", "nothing"];
const BACKGROUND: [f32; 3] = [0.5, 0.5, 0.5];
const RED: [f32; 3] = [0.9, 0.15, 0.1];
const BLUE: [f32; 3] = [0.1, 0.2, 0.9];

/// `images_per_class` red-disk images (class 0) followed by as many
/// blue-square images (class 1), 64 × 64 RGB on noisy gray. Even-numbered
/// images are segmented by a 2 × 2 grid, odd ones by 4 Voronoi cells.
pub fn desk_dataset(images_per_class: usize, seed: u64) -> Vec<DeskSample> {
    let s = DESK_SIZE;
    let noise = Normal::new(0.0f32, 0.05).expect("finite std");
    let mut out = Vec::with_capacity(2 * images_per_class);
    for idx in 0..2 * images_per_class {
        let class = idx / images_per_class;
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(idx as u64));
        let mut image = Planes::zeros(3, s, s);
        for c in 0..3 {
            for v in image.plane_mut(c) {
                *v = (BACKGROUND[c] + noise.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
        let inside: Box<dyn Fn(usize, usize) -> bool> = if class == 0 {
            let r = rng.random_range(9.0f32..14.0);
            let cy = rng.random_range(r + 2.0..s as f32 - r - 2.0);
            let cx = rng.random_range(r + 2.0..s as f32 - r - 2.0);
            Box::new(move |y, x| {
                let (dy, dx) = (y as f32 + 0.5 - cy, x as f32 + 0.5 - cx);
                dy * dy + dx * dx <= r * r
            })
        } else {
            let side = rng.random_range(16..=26);
            let y0 = rng.random_range(2..s - side - 2);
            let x0 = rng.random_range(2..s - side - 2);
            Box::new(move |y, x| (y0..y0 + side).contains(&y) && (x0..x0 + side).contains(&x))
        };
        let color = if class == 0 { RED } else { BLUE };
        for y in 0..s {
            for x in 0..s {
                if inside(y, x) {
                    for c in 0..3 {
                        let v = (color[c] + noise.sample(&mut rng)).clamp(0.0, 1.0);
                        image.set(c, y, x, v);
                    }
                }
            }
        }
        let image_id = format!("img_{idx:04}");
        let mode = if idx % 2 == 0 {
            SegmenterMode::Grid { rows: 2, cols: 2 }
        } else {
            SegmenterMode::Voronoi { sites: 4 }
        };
        let masks = synthetic_segmenter(&image_id, s, s, mode, seed ^ (idx as u64) << 8)
            .expect("valid segmenter");
        out.push(DeskSample {
            image_id,
            class,
            image,
            masks,
        });
    }
    out
}

/// Desk samples as dataset items with their granular label maps.
pub fn desk_items(samples: &[DeskSample]) -> Result<Vec<DatasetItem>> {
    samples
        .iter()
        .map(|s| {
            Ok(DatasetItem {
                image_id: s.image_id.clone(),
                class_label: Some(s.class),
                image: s.image.clone(),
                label_map: select_granular(&s.masks, defaults::MIN_AREA_FRACTION)?,
            })
        })
        .collect()
}

/// Hand-built classifier for [`desk_dataset`].
///
/// The first convolution holds colour detectors (redness, blueness,
/// brightness, darkness), four oriented edge detectors and eight seeded
/// random filters. The second stage copies those 16 channels and adds 16
/// random mixtures, then a residual block adds a small random refinement.
/// Class 0 reads the redness channel, class 1 the blueness channel, and the
/// third output ("nothing") is a constant bias that wins when neither colour
/// is visible.
pub fn desk_model(seed: u64) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w1 = vec![0.0f32; 16 * 3 * 9];
    let mut b1 = vec![0.0f32; 16];
    let set_uniform = |w1: &mut [f32], o: usize, rgb: [f32; 3]| {
        for (i, v) in rgb.iter().enumerate() {
            for t in 0..9 {
                w1[(o * 3 + i) * 9 + t] = v / 9.0;
            }
        }
    };
    set_uniform(&mut w1, 0, [1.0, -0.5, -0.5]);
    b1[0] = -0.15;
    set_uniform(&mut w1, 1, [-0.5, -0.5, 1.0]);
    b1[1] = -0.15;
    // Brightness and darkness relative to the gray background.
    set_uniform(&mut w1, 2, [1.0 / 3.0; 3]);
    b1[2] = -0.45;
    set_uniform(&mut w1, 3, [-1.0 / 3.0; 3]);
    b1[3] = 0.5;
    // Sobel responses on luminance, both signs of both orientations.
    let sobel_y = [-1.0f32, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
    let sobel_x = [-1.0f32, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
    for (o, (k, sign)) in [
        (sobel_y, 1.0f32),
        (sobel_x, 1.0),
        (sobel_y, -1.0),
        (sobel_x, -1.0),
    ]
    .into_iter()
    .enumerate()
    {
        for i in 0..3 {
            for t in 0..9 {
                w1[((4 + o) * 3 + i) * 9 + t] = sign * k[t] / 12.0;
            }
        }
        b1[4 + o] = -0.1;
    }
    let random_part = gaussian(&mut rng, 8 * 27, 0.15);
    w1[8 * 27..].copy_from_slice(&random_part);
    // Random filters stay silent on gray.
    for o in 8..16 {
        let on_gray: f32 = (0..27).map(|j| w1[o * 27 + j] * BACKGROUND[j / 9]).sum();
        b1[o] = -on_gray - 0.15;
    }
    let conv1 = Conv2d {
        in_channels: 3,
        out_channels: 16,
        kernel: (3, 3),
        stride: 1,
        padding: 1,
        weight: w1,
        bias: b1,
    };

    let mut w2 = gaussian(&mut rng, 32 * 16 * 9, 0.05);
    for o in 0..16 {
        for i in 0..16 {
            for t in 0..9 {
                w2[(o * 16 + i) * 9 + t] = if i == o && t == 4 { 1.0 } else { 0.0 };
            }
        }
    }
    let mut b2 = vec![0.0f32; 32];
    b2[16..].fill(-0.1);
    let conv2 = Conv2d {
        in_channels: 16,
        out_channels: 32,
        kernel: (3, 3),
        stride: 1,
        padding: 1,
        weight: w2,
        bias: b2,
    };
    let small = |rng: &mut ChaCha8Rng| Conv2d {
        in_channels: 32,
        out_channels: 32,
        kernel: (3, 3),
        stride: 1,
        padding: 1,
        weight: gaussian(rng, 32 * 32 * 9, 0.01),
        bias: vec![0.0; 32],
    };
    let block = ResidualBlock {
        main: vec![
            Layer::Conv2d(small(&mut rng)),
            Layer::Relu,
            Layer::Conv2d(small(&mut rng)),
        ],
        projection: None,
    };
    let pool = MaxPool {
        kernel: 2,
        stride: 2,
        padding: 0,
    };
    let mut head_w = vec![0.0f32; 3 * 32];
    head_w[0] = 20.0;
    head_w[1] = -5.0;
    head_w[32] = -5.0;
    head_w[32 + 1] = 20.0;
    let layers = vec![
        Layer::Conv2d(conv1),
        Layer::Relu,
        Layer::MaxPool(pool),
        Layer::Conv2d(conv2),
        Layer::Relu,
        Layer::MaxPool(pool),
        Layer::Residual(block),
        Layer::Relu,
        Layer::GlobalAvgPool,
        Layer::Linear(Linear {
            in_features: 32,
            out_features: 3,
            weight: head_w,
            bias: vec![0.0, 0.0, 0.3],
        }),
    ];
    ModelGraph::new([3, DESK_SIZE, DESK_SIZE], BACKGROUND.to_vec(), layers)
        .expect("desk model is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::embed_segments;
    use crate::faithfulness_bench::{build_flip_plan, flip_trace, Direction};
    use crate::model::{forward, MaskingMode};

    #[test]
    fn zoo_graphs_are_valid_and_seeded() {
        for arch in ZooArch::ALL {
            let g = zoo_graph(arch, 3);
            assert_eq!(g, zoo_graph(arch, 3));
            assert_ne!(g, zoo_graph(arch, 4));
            let out = forward(&g, &random_image(3, 16, 16, 1)).unwrap();
            assert_eq!(out.logits.len(), 3);
        }
    }

    #[test]
    fn planted_relevance_matches_construction() {
        let s = planted_flip_setup(4, 6, 11).unwrap();
        let mode = MaskingMode::InpaintOriginalScale;
        for (item, rel) in s.items.iter().zip(&s.relevance) {
            let full = forward(&s.model, &item.image).unwrap();
            assert!((full.logits[0] - rel.iter().sum::<f64>()).abs() < 1e-4);
            assert!(full.logits[0] > s.threshold);
            let plan = build_flip_plan(&s.model, item, &s.space, &s.head, mode).unwrap();
            // Every concept strip lands on its own concept; the background is residual.
            assert_eq!(plan.residual_segments, vec![5]);
            for (pos, &l) in plan.order.iter().enumerate() {
                assert_eq!(plan.segments[pos], vec![l as u32 + 1]);
                assert!(
                    (plan.importance[pos] - rel[l]).abs() < 1e-4,
                    "{} vs {}",
                    plan.importance[pos],
                    rel[l]
                );
            }
        }
    }

    #[test]
    fn planted_deletion_and_insertion_are_complementary() {
        let s = planted_flip_setup(3, 4, 5).unwrap();
        let mode = MaskingMode::InpaintOriginalScale;
        for item in &s.items {
            let plan = build_flip_plan(&s.model, item, &s.space, &s.head, mode).unwrap();
            let del = flip_trace(
                &s.model,
                &item.image,
                0,
                &plan.masks,
                Direction::Deletion,
                mode,
            )
            .unwrap();
            let ins = flip_trace(
                &s.model,
                &item.image,
                0,
                &plan.masks,
                Direction::Insertion,
                mode,
            )
            .unwrap();
            let full = del[0].logits[0];
            for (d, i) in del.iter().zip(&ins) {
                assert!((d.logits[0] + i.logits[0] - full).abs() < 1e-4);
                assert!((d.occluded_fraction + i.occluded_fraction - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn desk_dataset_is_deterministic() {
        let a = desk_dataset(3, 9);
        assert_eq!(a, desk_dataset(3, 9));
        assert_eq!(a.len(), 6);
        assert_eq!(
            a.iter().map(|s| s.class).collect::<Vec<_>>(),
            vec![0, 0, 0, 1, 1, 1]
        );
        assert_ne!(a[0].image, desk_dataset(3, 10)[0].image);
        let items = desk_items(&a).unwrap();
        assert!(items.iter().all(|i| i.label_map.segment_count >= 2));
    }

    #[test]
    fn desk_model_separates_the_classes() {
        let g = desk_model(0);
        let samples = desk_dataset(10, 1);
        let correct = samples
            .iter()
            .filter(|s| {
                let l = forward(&g, &s.image).unwrap().logits;
                (0..3).max_by(|&a, &b| l[a].total_cmp(&l[b])).unwrap() == s.class
            })
            .count();
        assert_eq!(correct, samples.len());
        // A plain gray image is "nothing".
        let gray = Planes::from_vec(
            3,
            DESK_SIZE,
            DESK_SIZE,
            vec![0.5; 3 * DESK_SIZE * DESK_SIZE],
        )
        .unwrap();
        let l = forward(&g, &gray).unwrap().logits;
        assert!(l[2] > l[0] && l[2] > l[1], "{l:?}");
        // Segment embeddings are finite and the right width.
        let items = desk_items(&samples[..1]).unwrap();
        let e = embed_segments(
            &g,
            "x",
            Some(0),
            &items[0].image,
            &items[0].label_map,
            MaskingMode::LayerMasking,
        )
        .unwrap();
        assert!(e.iter().all(|s| s.phi.len() == 32));
    }
}
