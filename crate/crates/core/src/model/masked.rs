use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::forward::{
    batchnorm_in_place, check_input, conv2d, forward, global_avg_pool, linear, maxpool,
    relu_in_place,
};
use super::masking::{
    erode_mask_with, first_layer_mask, neighborhood_pad, propagate_mask, ErosionBorder,
    MaskedTensor,
};
use super::{Layer, ModelGraph};
use crate::defaults::SHRINK_AREA_THRESHOLD;
use crate::error::{Error, Result};
use crate::model::ForwardOutput;
use crate::tensor::{Mask, Planes};

/// How a partial image is presented to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskingMode {
    /// Propagate the mask through the network; see [`masked_forward`].
    LayerMasking,
    /// Fill masked pixels with the dataset mean color at the original scale.
    InpaintOriginalScale,
    /// Crop the mask's bounding box, mean-fill outside the mask, and resize
    /// back to the input resolution.
    CropAndRescale,
}

impl MaskingMode {
    pub const ALL: [MaskingMode; 3] = [
        MaskingMode::LayerMasking,
        MaskingMode::InpaintOriginalScale,
        MaskingMode::CropAndRescale,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MaskingMode::LayerMasking => "layer_masking",
            MaskingMode::InpaintOriginalScale => "inpaint_original_scale",
            MaskingMode::CropAndRescale => "crop_and_rescale",
        }
    }
}

impl fmt::Display for MaskingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MaskingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MaskingMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown masking mode {s:?}")))
    }
}

/// Inference on the part of `image` selected by `pixel_mask`.
///
/// Under [`MaskingMode::LayerMasking`] the first convolution reads the full
/// image, so its outputs inside the mask see a band of context one kernel
/// radius wide. Masks covering more than a quarter of the image are first
/// eroded by that convolution's kernel size (keeping the original mask if the
/// erosion would empty it). From the second convolution on, every layer only
/// reads valid positions: convolutions run on neighbourhood-padded inputs
/// with any-overlap mask propagation, batchnorm and relu act on valid
/// positions, max pooling ignores invalid entries, residual masks combine by
/// OR, and the global pool averages over valid positions only.
pub fn masked_forward(
    g: &ModelGraph,
    image: &Planes,
    pixel_mask: &Mask,
    mode: MaskingMode,
) -> Result<ForwardOutput> {
    check_input(g, image)?;
    check_mask(image, pixel_mask)?;
    if !pixel_mask.any() {
        return Err(Error::InvalidArgument("mask selects no pixels".into()));
    }
    match mode {
        MaskingMode::LayerMasking => layer_masked(g, image, pixel_mask),
        MaskingMode::InpaintOriginalScale => forward(g, &inpaint(g, image, pixel_mask)),
        MaskingMode::CropAndRescale => forward(g, &crop_and_rescale(g, image, pixel_mask)),
    }
}

/// Like [`masked_forward`], but an empty mask is answered instead of
/// rejected: layer masking has no evidence left and returns `φ = 0` with the
/// bias as logits; the baseline-color modes see an all-mean image.
pub fn masked_forward_or_bias(
    g: &ModelGraph,
    image: &Planes,
    pixel_mask: &Mask,
    mode: MaskingMode,
) -> Result<ForwardOutput> {
    check_input(g, image)?;
    check_mask(image, pixel_mask)?;
    if pixel_mask.any() {
        return masked_forward(g, image, pixel_mask, mode);
    }
    match mode {
        MaskingMode::LayerMasking => {
            let features = vec![0.0; g.feature_dim()];
            let logits = linear(g.head(), &features);
            Ok(ForwardOutput { features, logits })
        }
        MaskingMode::InpaintOriginalScale | MaskingMode::CropAndRescale => {
            forward(g, &inpaint(g, image, pixel_mask))
        }
    }
}

fn check_mask(image: &Planes, mask: &Mask) -> Result<()> {
    if (mask.height, mask.width) != (image.height, image.width) {
        return Err(Error::InvalidArgument(format!(
            "mask is {}x{} but the image is {}x{}",
            mask.height, mask.width, image.height, image.width
        )));
    }
    Ok(())
}

/// The mask actually used by layer masking after the large-mask shrink rule.
pub(crate) fn shrink_large_mask(g: &ModelGraph, mask: &Mask) -> Result<Mask> {
    if mask.area_fraction() <= SHRINK_AREA_THRESHOLD {
        return Ok(mask.clone());
    }
    let (kh, kw) = g.first_conv().kernel;
    let eroded = erode_mask_with(mask, kh.max(kw), ErosionBorder::Valid)?;
    Ok(if eroded.any() { eroded } else { mask.clone() })
}

fn layer_masked(g: &ModelGraph, image: &Planes, pixel_mask: &Mask) -> Result<ForwardOutput> {
    let mask = shrink_large_mask(g, pixel_mask)?;
    let body = g.body();
    let first = body
        .iter()
        .position(|l| matches!(l, Layer::Conv2d(_)))
        .expect("validated graph has a leading convolution");

    let mut x = image.clone();
    for layer in &body[..first] {
        match layer {
            Layer::BatchNorm(bn) => batchnorm_in_place(&mut x, bn),
            Layer::Relu => relu_in_place(&mut x),
            _ => unreachable!("only elementwise layers precede the first convolution"),
        }
    }
    let Layer::Conv2d(conv) = &body[first] else {
        unreachable!()
    };
    let mut values = conv2d(&x, conv);
    let out_mask = first_layer_mask(&mask, conv)?;
    values.zero_outside(&out_mask);
    let state = run_masked(
        &body[first + 1..],
        MaskedTensor {
            values,
            mask: out_mask,
        },
    )?;

    let features = global_avg_pool(&state.values, Some(&state.mask.bits));
    let logits = linear(g.head(), &features);
    Ok(ForwardOutput { features, logits })
}

/// Masked execution of layers after the first convolution. Invariant: values
/// at invalid positions are zero on entry and on exit.
pub(crate) fn run_masked(layers: &[Layer], mut state: MaskedTensor) -> Result<MaskedTensor> {
    for (i, layer) in layers.iter().enumerate() {
        state = match layer {
            Layer::Conv2d(conv) => {
                let padded = neighborhood_pad(&state, conv.kernel.0.max(conv.kernel.1))?;
                let mut values = conv2d(&padded, conv);
                let mask = propagate_mask(&state.mask, conv.kernel, conv.stride, conv.padding)?;
                values.zero_outside(&mask);
                MaskedTensor { values, mask }
            }
            Layer::BatchNorm(bn) => {
                batchnorm_in_place(&mut state.values, bn);
                state.values.zero_outside(&state.mask);
                state
            }
            Layer::Relu => {
                relu_in_place(&mut state.values);
                state.values.zero_outside(&state.mask);
                state
            }
            Layer::MaxPool(p) => {
                let mut values = maxpool(&state.values, p, Some(&state.mask.bits));
                let mask = propagate_mask(&state.mask, (p.kernel, p.kernel), p.stride, p.padding)?;
                values.zero_outside(&mask);
                MaskedTensor { values, mask }
            }
            Layer::Residual(block) => {
                let shortcut = match &block.projection {
                    None => state.clone(),
                    Some(proj) => run_masked(proj, state.clone())?,
                };
                let mut main = run_masked(&block.main, state)?;
                for (m, s) in main.values.data.iter_mut().zip(&shortcut.values.data) {
                    *m += *s;
                }
                main.mask = main.mask.or(&shortcut.mask);
                main
            }
            Layer::GlobalAvgPool | Layer::Linear(_) => {
                unreachable!("tail layers are handled by the caller")
            }
        };
        if !state.mask.any() {
            return Err(Error::Contract(format!(
                "mask vanished after masked layer {i}"
            )));
        }
    }
    Ok(state)
}

/// Validity masks of layer masking: the (possibly shrunk) pixel mask, then
/// the mask after every top-level body layer, labelled by layer kind.
pub fn layer_masks(g: &ModelGraph, pixel_mask: &Mask) -> Result<Vec<(&'static str, Mask)>> {
    let [_, h, w] = g.input_shape;
    if (pixel_mask.height, pixel_mask.width) != (h, w) {
        return Err(Error::InvalidArgument(format!(
            "mask is {}x{} but the model expects {h}x{w}",
            pixel_mask.height, pixel_mask.width
        )));
    }
    if !pixel_mask.any() {
        return Err(Error::InvalidArgument("mask selects no pixels".into()));
    }
    let mut mask = shrink_large_mask(g, pixel_mask)?;
    let mut out = vec![("input", mask.clone())];
    let mut seen_conv = false;
    for layer in g.body() {
        mask = match layer {
            Layer::Conv2d(conv) if !seen_conv => {
                seen_conv = true;
                first_layer_mask(&mask, conv)?
            }
            _ if !seen_conv => mask,
            _ => masks_after(std::slice::from_ref(layer), mask)?,
        };
        out.push((layer.kind(), mask.clone()));
    }
    Ok(out)
}

fn masks_after(layers: &[Layer], mut mask: Mask) -> Result<Mask> {
    for layer in layers {
        mask = match layer {
            Layer::Conv2d(c) => propagate_mask(&mask, c.kernel, c.stride, c.padding)?,
            Layer::MaxPool(p) => propagate_mask(&mask, (p.kernel, p.kernel), p.stride, p.padding)?,
            Layer::Residual(block) => {
                let shortcut = match &block.projection {
                    None => mask.clone(),
                    Some(proj) => masks_after(proj, mask.clone())?,
                };
                masks_after(&block.main, mask)?.or(&shortcut)
            }
            _ => mask,
        };
    }
    Ok(mask)
}

fn inpaint(g: &ModelGraph, image: &Planes, mask: &Mask) -> Planes {
    let mut out = image.clone();
    for c in 0..out.channels {
        let fill = g.input_mean[c];
        for (v, &keep) in out.plane_mut(c).iter_mut().zip(&mask.bits) {
            if !keep {
                *v = fill;
            }
        }
    }
    out
}

fn crop_and_rescale(g: &ModelGraph, image: &Planes, mask: &Mask) -> Planes {
    let (y0, x0, y1, x1) = mask.bounding_box().expect("non-empty mask");
    let (bh, bw) = (y1 - y0, x1 - x0);
    let mut crop = Planes::zeros(image.channels, bh, bw);
    for c in 0..image.channels {
        for y in 0..bh {
            for x in 0..bw {
                let v = if mask.get(y0 + y, x0 + x) {
                    image.get(c, y0 + y, x0 + x)
                } else {
                    g.input_mean[c]
                };
                crop.set(c, y, x, v);
            }
        }
    }
    resize_bilinear(&crop, image.height, image.width)
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub(crate) fn resize_bilinear(src: &Planes, height: usize, width: usize) -> Planes {
    let mut out = Planes::zeros(src.channels, height, width);
    let sy = src.height as f32 / height as f32;
    let sx = src.width as f32 / width as f32;
    let coord = |o: usize, scale: f32, len: usize| -> (usize, usize, f32) {
        let pos = ((o as f32 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f32);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, pos - lo as f32)
    };
    for y in 0..height {
        let (ya, yb, ty) = coord(y, sy, src.height);
        for x in 0..width {
            let (xa, xb, tx) = coord(x, sx, src.width);
            for c in 0..src.channels {
                let top = src.get(c, ya, xa) * (1.0 - tx) + src.get(c, ya, xb) * tx;
                let bottom = src.get(c, yb, xa) * (1.0 - tx) + src.get(c, yb, xb) * tx;
                out.set(c, y, x, top * (1.0 - ty) + bottom * ty);
            }
        }
    }
    out
}
