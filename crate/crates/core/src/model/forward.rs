use super::{BatchNorm, Conv2d, Layer, Linear, MaxPool, ModelGraph};
use crate::error::{Error, Result};
use crate::tensor::{Planes, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Pooled hidden representation `φ ∈ ℝ^D`.
    pub features: Vec<f64>,
    /// `W·φ + b`
    pub logits: Vec<f64>,
}

/// Zero-padded 2-D convolution. Both forward passes go through this kernel so
/// that an all-valid masked pass reproduces the standard pass bit for bit.
pub fn conv2d(input: &Planes, conv: &Conv2d) -> Planes {
    let (oh, ow) = conv
        .output_size(input.height, input.width)
        .expect("validated convolution geometry");
    let (kh, kw) = conv.kernel;
    let (h, w) = (input.height as isize, input.width as isize);
    let (stride, pad) = (conv.stride as isize, conv.padding as isize);
    let mut out = Planes::zeros(conv.out_channels, oh, ow);
    for o in 0..conv.out_channels {
        let plane = out.plane_mut(o);
        plane.fill(conv.bias[o]);
        for i in 0..conv.in_channels {
            let src = input.plane(i);
            for ky in 0..kh {
                for kx in 0..kw {
                    let wgt = conv.weight_at(o, i, ky, kx);
                    if wgt == 0.0 {
                        continue;
                    }
                    // Output columns whose tap lands inside the row.
                    let shift = kx as isize - pad;
                    let lo = ((-shift).max(0) as usize).div_ceil(stride as usize).min(ow);
                    let hi = if w - 1 - shift < 0 {
                        0
                    } else {
                        (((w - 1 - shift) / stride) as usize + 1).min(ow)
                    };
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = oy as isize * stride + ky as isize - pad;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let row =
                            &src[(iy as usize) * input.width..(iy as usize + 1) * input.width];
                        let dst = &mut plane[oy * ow + lo..oy * ow + hi];
                        let start = (lo as isize * stride + shift) as usize;
                        if stride == 1 {
                            for (d, s) in dst.iter_mut().zip(&row[start..start + (hi - lo)]) {
                                *d += wgt * s;
                            }
                        } else {
                            for (d, s) in dst
                                .iter_mut()
                                .zip(row[start..].iter().step_by(stride as usize))
                            {
                                *d += wgt * s;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn batchnorm_in_place(x: &mut Planes, bn: &BatchNorm) {
    for c in 0..x.channels {
        let (scale, shift) = bn.affine(c);
        for v in x.plane_mut(c) {
            *v = *v * scale + shift;
        }
    }
}

pub(crate) fn relu_in_place(x: &mut Planes) {
    for v in &mut x.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Max pooling; `valid` restricts the candidates of every window (all
/// positions when `None`). Windows without candidates produce 0.
pub(crate) fn maxpool(x: &Planes, p: &MaxPool, valid: Option<&[bool]>) -> Planes {
    let (oh, ow) =
        super::window_output(x.height, x.width, (p.kernel, p.kernel), p.stride, p.padding)
            .expect("validated pooling geometry");
    let mut out = Planes::zeros(x.channels, oh, ow);
    let (h, w) = (x.height as isize, x.width as isize);
    for c in 0..x.channels {
        let src = x.plane(c);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut seen = false;
                for ky in 0..p.kernel {
                    let iy = (oy * p.stride + ky) as isize - p.padding as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    for kx in 0..p.kernel {
                        let ix = (ox * p.stride + kx) as isize - p.padding as isize;
                        if ix < 0 || ix >= w {
                            continue;
                        }
                        let idx = iy as usize * x.width + ix as usize;
                        if valid.is_some_and(|v| !v[idx]) {
                            continue;
                        }
                        seen = true;
                        best = best.max(src[idx]);
                    }
                }
                out.set(c, oy, ox, if seen { best } else { 0.0 });
            }
        }
    }
    out
}

/// Mean over the positions selected by `valid` (all when `None`), summed in
/// row-major order in f64.
pub(crate) fn global_avg_pool(x: &Planes, valid: Option<&[bool]>) -> Vec<f64> {
    let count = match valid {
        None => x.plane_len(),
        Some(v) => v.iter().filter(|b| **b).count(),
    };
    (0..x.channels)
        .map(|c| {
            let mut acc = 0.0f64;
            for (i, v) in x.plane(c).iter().enumerate() {
                if valid.is_none_or(|m| m[i]) {
                    acc += *v as f64;
                }
            }
            acc / count as f64
        })
        .collect()
}

pub(crate) fn linear(head: &Linear, features: &[f64]) -> Vec<f64> {
    (0..head.out_features)
        .map(|k| {
            let row = head.row(k);
            let mut acc = head.bias[k] as f64;
            for (w, f) in row.iter().zip(features) {
                acc += *w as f64 * f;
            }
            acc
        })
        .collect()
}

fn run_layers(layers: &[Layer], mut x: Planes) -> Planes {
    for layer in layers {
        x = match layer {
            Layer::Conv2d(conv) => conv2d(&x, conv),
            Layer::BatchNorm(bn) => {
                batchnorm_in_place(&mut x, bn);
                x
            }
            Layer::Relu => {
                relu_in_place(&mut x);
                x
            }
            Layer::MaxPool(p) => maxpool(&x, p, None),
            Layer::Residual(block) => {
                let shortcut = match &block.projection {
                    None => x.clone(),
                    Some(proj) => run_layers(proj, x.clone()),
                };
                let mut main = run_layers(&block.main, x);
                for (m, s) in main.data.iter_mut().zip(&shortcut.data) {
                    *m += *s;
                }
                main
            }
            Layer::GlobalAvgPool | Layer::Linear(_) => {
                unreachable!("tail layers are handled by forward")
            }
        };
    }
    x
}

pub(crate) fn check_input(g: &ModelGraph, image: &Planes) -> Result<()> {
    if image.shape() != g.input_shape {
        return Err(Error::InvalidArgument(format!(
            "image shape {:?} does not match the model input {:?}",
            image.shape(),
            g.input_shape
        )));
    }
    Ok(())
}

/// Standard inference: `φ = GAP(h(x))`, logits `= W·φ + b`.
pub fn forward(g: &ModelGraph, image: &Planes) -> Result<ForwardOutput> {
    check_input(g, image)?;
    let body = run_layers(g.body(), image.clone());
    let features = global_avg_pool(&body, None);
    let logits = linear(g.head(), &features);
    Ok(ForwardOutput { features, logits })
}

/// Runs every image of the batch independently.
pub fn forward_batch(g: &ModelGraph, batch: &Tensor) -> Result<Vec<ForwardOutput>> {
    (0..batch.batch())
        .map(|i| forward(g, &batch.image(i)))
        .collect()
}
