//! CNN graphs, the standard forward pass, and the layer-masking forward pass.
//!
//! A graph is an ordered layer list that ends in exactly one global average
//! pool followed by exactly one linear layer. Everything before the pool is
//! the feature extractor `h`; the pooled vector is `φ` and the linear tail is
//! the class head `g`.

mod forward;
mod manifest;
mod masked;
mod masking;

pub use forward::{conv2d, forward, forward_batch, ForwardOutput};
pub use manifest::{
    encode_model, load_model, parse_model, save_model, Manifest, ManifestLayer, MANIFEST_FORMAT,
};
pub use masked::{layer_masks, masked_forward, masked_forward_or_bias, MaskingMode};
pub use masking::{
    erode_mask, erode_mask_with, first_layer_mask, neighborhood_pad, propagate_mask, ErosionBorder,
    MaskedTensor,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    /// (height, width)
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    /// out × in × kh × kw
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv2d {
    pub fn output_size(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        window_output(height, width, self.kernel, self.stride, self.padding)
    }

    #[inline]
    pub fn weight_at(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        let (kh, kw) = self.kernel;
        self.weight[((o * self.in_channels + i) * kh + ky) * kw + kx]
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel.0 * self.kernel.1 + self.out_channels
    }
}

/// Inference-mode batch normalization with stored running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub eps: f32,
}

impl BatchNorm {
    /// Per-channel `(scale, shift)` with `y = x·scale + shift`.
    pub fn affine(&self, c: usize) -> (f32, f32) {
        let scale = self.gamma[c] / (self.running_var[c] + self.eps).sqrt();
        (scale, self.beta[c] - self.running_mean[c] * scale)
    }

    pub fn param_count(&self) -> usize {
        4 * self.channels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub main: Vec<Layer>,
    /// `None` is the identity shortcut.
    pub projection: Option<Vec<Layer>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// out × in, row-major
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Linear {
    pub fn row(&self, k: usize) -> &[f32] {
        &self.weight[k * self.in_features..(k + 1) * self.in_features]
    }

    pub fn param_count(&self) -> usize {
        self.out_features * self.in_features + self.out_features
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    BatchNorm(BatchNorm),
    Relu,
    MaxPool(MaxPool),
    GlobalAvgPool,
    Residual(ResidualBlock),
    Linear(Linear),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu => "relu",
            Layer::MaxPool(_) => "maxpool",
            Layer::GlobalAvgPool => "global_avg_pool",
            Layer::Residual(_) => "residual",
            Layer::Linear(_) => "linear",
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv2d(c) => c.param_count(),
            Layer::BatchNorm(b) => b.param_count(),
            Layer::Linear(l) => l.param_count(),
            Layer::Residual(r) => {
                r.main.iter().map(Layer::param_count).sum::<usize>()
                    + r.projection
                        .iter()
                        .flatten()
                        .map(Layer::param_count)
                        .sum::<usize>()
            }
            Layer::Relu | Layer::MaxPool(_) | Layer::GlobalAvgPool => 0,
        }
    }

    fn is_elementwise(&self) -> bool {
        matches!(self, Layer::BatchNorm(_) | Layer::Relu)
    }
}

pub(crate) fn window_output(
    height: usize,
    width: usize,
    kernel: (usize, usize),
    stride: usize,
    padding: usize,
) -> Option<(usize, usize)> {
    let (kh, kw) = kernel;
    if stride == 0 || kh == 0 || kw == 0 {
        return None;
    }
    let ph = height + 2 * padding;
    let pw = width + 2 * padding;
    if ph < kh || pw < kw {
        return None;
    }
    Some(((ph - kh) / stride + 1, (pw - kw) / stride + 1))
}

/// A validated CNN classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    /// (channels, height, width)
    pub input_shape: [usize; 3],
    /// Per-channel fill color for the baseline-color masking modes.
    pub input_mean: Vec<f32>,
    pub layers: Vec<Layer>,
}

impl ModelGraph {
    pub fn new(input_shape: [usize; 3], input_mean: Vec<f32>, layers: Vec<Layer>) -> Result<Self> {
        let g = Self {
            input_shape,
            input_mean,
            layers,
        };
        g.validate()?;
        Ok(g)
    }

    /// Layers before the pooling tail.
    pub fn body(&self) -> &[Layer] {
        &self.layers[..self.layers.len() - 2]
    }

    pub fn head(&self) -> &Linear {
        match self.layers.last() {
            Some(Layer::Linear(l)) => l,
            _ => unreachable!("validated graph ends in a linear layer"),
        }
    }

    /// Width `D` of the pooled feature vector.
    pub fn feature_dim(&self) -> usize {
        self.head().in_features
    }

    pub fn num_classes(&self) -> usize {
        self.head().out_features
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// The convolution that sees the unmasked image under layer masking.
    pub fn first_conv(&self) -> &Conv2d {
        self.layers
            .iter()
            .find_map(|l| match l {
                Layer::Conv2d(c) => Some(c),
                _ => None,
            })
            .expect("validated graph has a leading convolution")
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.layers.len();
        if n < 3 {
            return Err(load_err(
                None,
                "graph needs a convolution, a global average pool and a linear tail",
            ));
        }
        let [c, h, w] = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(load_err(None, "input shape must be positive"));
        }
        if self.input_mean.len() != c {
            return Err(load_err(
                None,
                format!(
                    "input_mean has {} entries for {c} channels",
                    self.input_mean.len()
                ),
            ));
        }
        if !matches!(self.layers[n - 2], Layer::GlobalAvgPool)
            || !matches!(self.layers[n - 1], Layer::Linear(_))
        {
            return Err(load_err(
                Some(n - 1),
                "graph must end in global_avg_pool followed by linear",
            ));
        }
        // The first non-elementwise layer must be a top-level convolution: it
        // is the one layer that reads the unmasked image.
        match self.layers.iter().position(|l| !l.is_elementwise()) {
            Some(i) if matches!(self.layers[i], Layer::Conv2d(_)) => {}
            Some(i) => {
                return Err(load_err(
                    Some(i),
                    "only batchnorm/relu may precede the first convolution",
                ))
            }
            None => unreachable!(),
        }

        let mut shape = (c, h, w);
        for (i, layer) in self.body().iter().enumerate() {
            shape = infer_shape(layer, shape).map_err(|reason| load_err(Some(i), reason))?;
        }
        let head = self.head();
        if head.in_features != shape.0 {
            return Err(load_err(
                Some(n - 1),
                format!(
                    "linear expects {} features but the pooled width is {}",
                    head.in_features, shape.0
                ),
            ));
        }
        check_linear(head).map_err(|r| load_err(Some(n - 1), r))?;
        Ok(())
    }
}

fn load_err(layer: Option<usize>, reason: impl Into<String>) -> Error {
    Error::ModelLoad {
        layer,
        reason: reason.into(),
    }
}

fn check_linear(l: &Linear) -> std::result::Result<(), String> {
    if l.weight.len() != l.in_features * l.out_features || l.bias.len() != l.out_features {
        return Err("linear parameter lengths do not match its shape".into());
    }
    if l.out_features == 0 {
        return Err("linear layer needs at least one output".into());
    }
    Ok(())
}

/// Output `(channels, height, width)` of a body layer.
pub(crate) fn infer_shape(
    layer: &Layer,
    (c, h, w): (usize, usize, usize),
) -> std::result::Result<(usize, usize, usize), String> {
    match layer {
        Layer::Conv2d(conv) => {
            if conv.in_channels != c {
                return Err(format!(
                    "conv2d expects {} input channels, got {c}",
                    conv.in_channels
                ));
            }
            if conv.weight.len()
                != conv.out_channels * conv.in_channels * conv.kernel.0 * conv.kernel.1
                || conv.bias.len() != conv.out_channels
            {
                return Err("conv2d parameter lengths do not match its shape".into());
            }
            let (oh, ow) = conv
                .output_size(h, w)
                .ok_or_else(|| format!("conv2d geometry does not fit a {h}x{w} input"))?;
            Ok((conv.out_channels, oh, ow))
        }
        Layer::BatchNorm(bn) => {
            if bn.channels != c {
                return Err(format!(
                    "batchnorm expects {} channels, got {c}",
                    bn.channels
                ));
            }
            for v in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
                if v.len() != c {
                    return Err("batchnorm parameter lengths do not match its channel count".into());
                }
            }
            if bn.running_var.iter().any(|v| !(*v > 0.0)) {
                return Err("batchnorm running variance must be positive".into());
            }
            Ok((c, h, w))
        }
        Layer::Relu => Ok((c, h, w)),
        Layer::MaxPool(p) => {
            if p.padding >= p.kernel {
                return Err("maxpool padding must be smaller than its kernel".into());
            }
            let (oh, ow) = window_output(h, w, (p.kernel, p.kernel), p.stride, p.padding)
                .ok_or_else(|| format!("maxpool geometry does not fit a {h}x{w} input"))?;
            Ok((c, oh, ow))
        }
        Layer::Residual(block) => {
            let mut main = (c, h, w);
            for l in &block.main {
                main = infer_shape(l, main)?;
            }
            let short = match &block.projection {
                None => (c, h, w),
                Some(layers) => {
                    let mut s = (c, h, w);
                    for l in layers {
                        s = infer_shape(l, s)?;
                    }
                    s
                }
            };
            if main != short {
                return Err(format!(
                    "residual branches disagree: main {main:?} vs shortcut {short:?}"
                ));
            }
            Ok(main)
        }
        Layer::GlobalAvgPool | Layer::Linear(_) => Err(format!(
            "{} may only appear in the pooling tail",
            layer.kind()
        )),
    }
}
