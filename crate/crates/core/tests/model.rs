use conceptspace::model::{
    conv2d, encode_model, forward, forward_batch, layer_masks, masked_forward, parse_model, Conv2d,
    Layer, Linear, MaskingMode, ModelGraph, ResidualBlock,
};
use conceptspace::synthetic::{random_image, zoo_graph, ZooArch};
use conceptspace::tensor::{Mask, Planes, Tensor};
use conceptspace::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn blob_mask(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Mask {
    let (cy, cx) = (rng.random_range(0..h) as f64, rng.random_range(0..w) as f64);
    let r = rng.random_range(1.5..5.0);
    Mask::from_fn(h, w, |y, x| {
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        dy * dy + dx * dx <= r * r
    })
}

#[test]
fn all_ones_mask_reproduces_forward_exactly() {
    for arch in ZooArch::ALL {
        let g = zoo_graph(arch, 1);
        for seed in 0..5 {
            let x = random_image(3, 16, 16, seed);
            let full = forward(&g, &x).unwrap();
            let masked = masked_forward(
                &g,
                &x,
                &Mask::filled(16, 16, true),
                MaskingMode::LayerMasking,
            )
            .unwrap();
            assert_eq!(full, masked, "{arch:?}");
        }
    }
}

#[test]
fn pixels_outside_the_dilated_mask_are_never_read() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for arch in ZooArch::ALL {
        let g = zoo_graph(arch, 2);
        let radius = g.first_conv().kernel.0 / 2;
        for trial in 0..20 {
            let x = random_image(3, 16, 16, 100 + trial);
            let mask = blob_mask(16, 16, &mut rng);
            let keep = mask.dilate(radius);
            let mut scrambled = x.clone();
            for c in 0..3 {
                for y in 0..16 {
                    for xx in 0..16 {
                        if !keep.get(y, xx) {
                            scrambled.set(c, y, xx, rng.random_range(-5.0..5.0));
                        }
                    }
                }
            }
            let a = masked_forward(&g, &x, &mask, MaskingMode::LayerMasking).unwrap();
            let b = masked_forward(&g, &scrambled, &mask, MaskingMode::LayerMasking).unwrap();
            assert_eq!(a.features, b.features, "{arch:?} trial {trial}");
        }
    }
}

fn tiny_head(d: usize, k: usize, weight: Vec<f32>, bias: Vec<f32>) -> Layer {
    Layer::Linear(Linear {
        in_features: d,
        out_features: k,
        weight,
        bias,
    })
}

#[test]
fn one_by_one_conv_matches_hand_arithmetic() {
    // One pixel, two channels in, one out: relu(2·a − b + 0.5), then 3·φ − 1.
    let conv = Conv2d {
        in_channels: 2,
        out_channels: 1,
        kernel: (1, 1),
        stride: 1,
        padding: 0,
        weight: vec![2.0, -1.0],
        bias: vec![0.5],
    };
    let g = ModelGraph::new(
        [2, 1, 1],
        vec![0.0, 0.0],
        vec![
            Layer::Conv2d(conv),
            Layer::Relu,
            Layer::GlobalAvgPool,
            tiny_head(1, 1, vec![3.0], vec![-1.0]),
        ],
    )
    .unwrap();
    let x = Planes::from_vec(2, 1, 1, vec![1.5, 0.25]).unwrap();
    let out = forward(&g, &x).unwrap();
    assert_eq!(out.features, vec![3.25]);
    assert_eq!(out.logits, vec![8.75]);
    let neg = Planes::from_vec(2, 1, 1, vec![-1.0, 0.0]).unwrap();
    assert_eq!(forward(&g, &neg).unwrap().logits, vec![-1.0]);
}

fn naive_conv(x: &Planes, c: &Conv2d) -> Planes {
    let (oh, ow) = c.output_size(x.height, x.width).unwrap();
    let mut out = Planes::zeros(c.out_channels, oh, ow);
    for o in 0..c.out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = c.bias[o] as f64;
                for i in 0..c.in_channels {
                    for ky in 0..c.kernel.0 {
                        for kx in 0..c.kernel.1 {
                            let iy = (oy * c.stride + ky) as isize - c.padding as isize;
                            let ix = (ox * c.stride + kx) as isize - c.padding as isize;
                            if iy >= 0
                                && ix >= 0
                                && (iy as usize) < x.height
                                && (ix as usize) < x.width
                            {
                                acc += c.weight_at(o, i, ky, kx) as f64
                                    * x.get(i, iy as usize, ix as usize) as f64;
                            }
                        }
                    }
                }
                out.set(o, oy, ox, acc as f32);
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..40 {
        let kh = rng.random_range(1..=5);
        let kw = rng.random_range(1..=5);
        let (cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let conv = Conv2d {
            in_channels: cin,
            out_channels: cout,
            kernel: (kh, kw),
            stride: rng.random_range(1..=3),
            padding: rng.random_range(0..=2),
            weight: (0..cout * cin * kh * kw)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
            bias: (0..cout).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let x = random_image(
            cin,
            rng.random_range(5..=12),
            rng.random_range(5..=12),
            trial,
        );
        let fast = conv2d(&x, &conv);
        let slow = naive_conv(&x, &conv);
        assert_eq!(fast.shape(), slow.shape());
        for (a, b) in fast.data.iter().zip(&slow.data) {
            assert!((a - b).abs() < 1e-5, "trial {trial}: {a} vs {b}");
        }
    }
}

#[test]
fn zero_image_through_bias_free_layers_gives_the_bias() {
    for arch in ZooArch::ALL {
        let mut g = zoo_graph(arch, 4);
        zero_shifts(&mut g.layers);
        let out = forward(&g, &Planes::zeros(3, 16, 16)).unwrap();
        assert!(out.features.iter().all(|v| *v == 0.0), "{arch:?}");
        let bias: Vec<f64> = g.head().bias.iter().map(|&b| b as f64).collect();
        assert_eq!(out.logits, bias);
    }
}

fn zero_shifts(layers: &mut [Layer]) {
    for l in layers {
        match l {
            Layer::Conv2d(c) => c.bias.fill(0.0),
            Layer::BatchNorm(b) => {
                b.beta.fill(0.0);
                b.running_mean.fill(0.0);
            }
            Layer::Residual(r) => {
                zero_shifts(&mut r.main);
                if let Some(p) = &mut r.projection {
                    zero_shifts(p);
                }
            }
            _ => {}
        }
    }
}

#[test]
fn identical_batch_rows_give_identical_outputs() {
    let g = zoo_graph(ZooArch::Residual, 5);
    let x = random_image(3, 16, 16, 9);
    let batch = Tensor::from_images(&[x.clone(), x.clone()]).unwrap();
    let out = forward_batch(&g, &batch).unwrap();
    assert_eq!(out[0], out[1]);
    assert_eq!(out[0], forward(&g, &x).unwrap());
}

#[test]
fn residual_positions_valid_in_one_branch_take_that_branch_alone() {
    // Constant image, one valid pixel. The 3×3 main branch spreads it to a
    // 3×3 block of value c; the 1×1 shortcut keeps only the centre, also c.
    // Valid-position pooling then sees 2c once and c eight times.
    let conv = |k: usize, w: f32| Conv2d {
        in_channels: 1,
        out_channels: 1,
        kernel: (k, k),
        stride: 1,
        padding: k / 2,
        weight: vec![w; k * k],
        bias: vec![0.0],
    };
    let g = ModelGraph::new(
        [1, 9, 9],
        vec![0.0],
        vec![
            Layer::Conv2d(conv(1, 1.0)),
            Layer::Residual(ResidualBlock {
                main: vec![Layer::Conv2d(conv(3, 1.0 / 9.0))],
                projection: Some(vec![Layer::Conv2d(conv(1, 1.0))]),
            }),
            Layer::GlobalAvgPool,
            tiny_head(1, 1, vec![1.0], vec![0.0]),
        ],
    )
    .unwrap();
    let c = 0.75f32;
    let x = Planes::from_vec(1, 9, 9, vec![c; 81]).unwrap();
    let mask = Mask::from_fn(9, 9, |y, x| (y, x) == (4, 4));
    let out = masked_forward(&g, &x, &mask, MaskingMode::LayerMasking).unwrap();
    let expected = 10.0 * c as f64 / 9.0;
    assert!(
        (out.features[0] - expected).abs() < 1e-6,
        "{} vs {expected}",
        out.features[0]
    );
    let trace = layer_masks(&g, &mask).unwrap();
    let kinds: Vec<&str> = trace.iter().map(|t| t.0).collect();
    assert_eq!(kinds, ["input", "conv2d", "residual"]);
    let counts: Vec<usize> = trace.iter().map(|t| t.1.count()).collect();
    assert_eq!(counts, [1, 1, 9]);
}

#[test]
fn a_full_mask_stays_full_through_every_layer() {
    for arch in ZooArch::ALL {
        let g = zoo_graph(arch, 0);
        let trace = layer_masks(&g, &Mask::filled(16, 16, true)).unwrap();
        assert_eq!(trace.len(), g.body().len() + 1);
        assert!(trace.iter().all(|(_, m)| m.all()), "{arch:?}");
    }
}

#[test]
fn manifest_round_trip_is_byte_identical() {
    for arch in ZooArch::ALL {
        let g = zoo_graph(arch, 6);
        let (json, blob) = encode_model(&g);
        let back = parse_model(&json, &blob).unwrap();
        assert_eq!(back, g);
        let (json2, blob2) = encode_model(&back);
        assert_eq!(json, json2);
        assert_eq!(blob, blob2);
    }
}

#[test]
fn blob_one_float_short_fails_at_the_final_layer() {
    for arch in ZooArch::ALL {
        let g = zoo_graph(arch, 8);
        let (json, blob) = encode_model(&g);
        let err = parse_model(&json, &blob[..blob.len() - 4]).unwrap_err();
        match err {
            Error::ModelLoad { layer, .. } => {
                assert_eq!(layer, Some(g.layers.len() - 1), "{arch:?}")
            }
            other => panic!("unexpected error {other}"),
        }
    }
}

#[test]
fn minimal_graph_feature_width_is_the_conv_width() {
    let g = zoo_graph(ZooArch::Plain, 0);
    let (json, blob) = encode_model(&g);
    let back = parse_model(&json, &blob).unwrap();
    let Some(Layer::Conv2d(last)) = back
        .body()
        .iter()
        .rev()
        .find(|l| matches!(l, Layer::Conv2d(_)))
    else {
        panic!("plain graph has a convolution");
    };
    assert_eq!(back.feature_dim(), last.out_channels);
}

#[test]
fn baseline_modes_reject_an_empty_mask() {
    let g = zoo_graph(ZooArch::Pooled, 0);
    let x = random_image(3, 16, 16, 0);
    for mode in MaskingMode::ALL {
        assert!(masked_forward(&g, &x, &Mask::filled(16, 16, false), mode).is_err());
    }
}
