//! Model container: a JSON manifest plus a raw little-endian f32 blob.
//!
//! Every layer entry records `weight_offset` and `weight_len` in bytes. A
//! parameterized layer packs its arrays in a fixed order:
//!
//! * `conv2d`: weight (out × in × kh × kw), then bias (out)
//! * `batchnorm`: gamma, beta, running mean, running variance
//! * `linear`: weight (out × in), then bias (out)
//!
//! A `residual` entry spans the parameters of its nested layers, main branch
//! first.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BatchNorm, Conv2d, Layer, Linear, MaxPool, ModelGraph, ResidualBlock};
use crate::error::{Error, Result};

pub const MANIFEST_FORMAT: &str = "conceptspace-model";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub endianness: String,
    pub input_shape: [usize; 3],
    pub input_mean: Vec<f32>,
    pub num_classes: usize,
    pub total_params: usize,
    pub layers: Vec<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManifestLayer {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: usize,
        weight_offset: usize,
        weight_len: usize,
    },
    #[serde(rename = "batchnorm")]
    BatchNorm {
        channels: usize,
        eps: f32,
        weight_offset: usize,
        weight_len: usize,
    },
    Relu {
        weight_offset: usize,
        weight_len: usize,
    },
    #[serde(rename = "maxpool")]
    MaxPool {
        kernel: usize,
        stride: usize,
        padding: usize,
        weight_offset: usize,
        weight_len: usize,
    },
    GlobalAvgPool {
        weight_offset: usize,
        weight_len: usize,
    },
    Residual {
        main: Vec<serde_json::Value>,
        projection: Option<Vec<serde_json::Value>>,
        weight_offset: usize,
        weight_len: usize,
    },
    Linear {
        in_features: usize,
        out_features: usize,
        weight_offset: usize,
        weight_len: usize,
    },
}

fn err(layer: Option<usize>, reason: impl Into<String>) -> Error {
    Error::ModelLoad {
        layer,
        reason: reason.into(),
    }
}

struct BlobReader<'a> {
    blob: &'a [u8],
    top: usize,
}

impl BlobReader<'_> {
    fn floats(
        &self,
        path: &str,
        offset: usize,
        len_bytes: usize,
        expected: usize,
    ) -> Result<Vec<f32>> {
        if len_bytes != expected * 4 {
            return Err(err(
                Some(self.top),
                format!(
                    "{path}: weight_len is {len_bytes} bytes but the declared shape needs {}",
                    expected * 4
                ),
            ));
        }
        let end = offset
            .checked_add(len_bytes)
            .ok_or_else(|| err(Some(self.top), format!("{path}: offset overflow")))?;
        if end > self.blob.len() {
            return Err(err(
                Some(self.top),
                format!(
                    "{path}: blob truncated, parameters span bytes {offset}..{end} but the blob has {}",
                    self.blob.len()
                ),
            ));
        }
        Ok(self.blob[offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }

    fn layer(&self, path: &str, raw: &serde_json::Value) -> Result<Layer> {
        let entry: ManifestLayer = serde_json::from_value(raw.clone()).map_err(|e| {
            let kind = raw
                .get("kind")
                .and_then(|k| k.as_str())
                .unwrap_or("<missing>");
            err(Some(self.top), format!("{path} (kind {kind:?}): {e}"))
        })?;
        Ok(match entry {
            ManifestLayer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                weight_offset,
                weight_len,
            } => {
                let nw = out_channels * in_channels * kernel[0] * kernel[1];
                let all = self.floats(path, weight_offset, weight_len, nw + out_channels)?;
                Layer::Conv2d(Conv2d {
                    in_channels,
                    out_channels,
                    kernel: (kernel[0], kernel[1]),
                    stride,
                    padding,
                    weight: all[..nw].to_vec(),
                    bias: all[nw..].to_vec(),
                })
            }
            ManifestLayer::BatchNorm {
                channels,
                eps,
                weight_offset,
                weight_len,
            } => {
                let all = self.floats(path, weight_offset, weight_len, 4 * channels)?;
                let part = |i: usize| all[i * channels..(i + 1) * channels].to_vec();
                Layer::BatchNorm(BatchNorm {
                    channels,
                    gamma: part(0),
                    beta: part(1),
                    running_mean: part(2),
                    running_var: part(3),
                    eps,
                })
            }
            ManifestLayer::Relu { weight_len, .. } => {
                self.no_params(path, weight_len)?;
                Layer::Relu
            }
            ManifestLayer::MaxPool {
                kernel,
                stride,
                padding,
                weight_len,
                ..
            } => {
                self.no_params(path, weight_len)?;
                Layer::MaxPool(MaxPool {
                    kernel,
                    stride,
                    padding,
                })
            }
            ManifestLayer::GlobalAvgPool { weight_len, .. } => {
                self.no_params(path, weight_len)?;
                Layer::GlobalAvgPool
            }
            ManifestLayer::Residual {
                main, projection, ..
            } => {
                let main = main
                    .iter()
                    .enumerate()
                    .map(|(i, v)| self.layer(&format!("{path}.main[{i}]"), v))
                    .collect::<Result<Vec<_>>>()?;
                let projection = match projection {
                    None => None,
                    Some(p) => Some(
                        p.iter()
                            .enumerate()
                            .map(|(i, v)| self.layer(&format!("{path}.projection[{i}]"), v))
                            .collect::<Result<Vec<_>>>()?,
                    ),
                };
                Layer::Residual(ResidualBlock { main, projection })
            }
            ManifestLayer::Linear {
                in_features,
                out_features,
                weight_offset,
                weight_len,
            } => {
                let nw = in_features * out_features;
                let all = self.floats(path, weight_offset, weight_len, nw + out_features)?;
                Layer::Linear(Linear {
                    in_features,
                    out_features,
                    weight: all[..nw].to_vec(),
                    bias: all[nw..].to_vec(),
                })
            }
        })
    }

    fn no_params(&self, path: &str, weight_len: usize) -> Result<()> {
        if weight_len != 0 {
            return Err(err(
                Some(self.top),
                format!("{path}: parameter-free layer declares {weight_len} bytes"),
            ));
        }
        Ok(())
    }
}

/// Parses a manifest and its blob into a validated graph.
pub fn parse_model(manifest_json: &[u8], blob: &[u8]) -> Result<ModelGraph> {
    let manifest: Manifest = serde_json::from_slice(manifest_json)
        .map_err(|e| err(None, format!("manifest does not parse: {e}")))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(err(
            None,
            format!("unexpected format tag {:?}", manifest.format),
        ));
    }
    if manifest.dtype != "f32" || manifest.endianness != "little" {
        return Err(err(None, "only little-endian f32 blobs are supported"));
    }
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (i, raw) in manifest.layers.iter().enumerate() {
        let reader = BlobReader { blob, top: i };
        layers.push(reader.layer(&format!("layers[{i}]"), raw)?);
    }
    if blob.len() != manifest.total_params * 4 {
        return Err(err(
            None,
            format!(
                "blob has {} bytes but total_params = {} needs {}",
                blob.len(),
                manifest.total_params,
                manifest.total_params * 4
            ),
        ));
    }
    let graph = ModelGraph::new(manifest.input_shape, manifest.input_mean, layers)?;
    if graph.param_count() != manifest.total_params {
        return Err(err(
            None,
            format!(
                "layers hold {} parameters but total_params = {}",
                graph.param_count(),
                manifest.total_params
            ),
        ));
    }
    if graph.num_classes() != manifest.num_classes {
        return Err(err(
            Some(graph.layers.len() - 1),
            format!(
                "linear has {} outputs but num_classes = {}",
                graph.num_classes(),
                manifest.num_classes
            ),
        ));
    }
    Ok(graph)
}

pub fn load_model(manifest_path: &Path, blob_path: &Path) -> Result<ModelGraph> {
    let manifest = fs::read(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let blob = fs::read(blob_path).map_err(|e| Error::io(blob_path, e))?;
    parse_model(&manifest, &blob)
}

struct BlobWriter {
    blob: Vec<u8>,
}

impl BlobWriter {
    fn push(&mut self, arrays: &[&[f32]]) -> (usize, usize) {
        let start = self.blob.len();
        for a in arrays {
            for v in *a {
                self.blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        (start, self.blob.len() - start)
    }

    fn entry(&mut self, layer: &Layer) -> serde_json::Value {
        let start = self.blob.len();
        let entry = match layer {
            Layer::Conv2d(c) => {
                let (weight_offset, weight_len) = self.push(&[&c.weight, &c.bias]);
                ManifestLayer::Conv2d {
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    kernel: [c.kernel.0, c.kernel.1],
                    stride: c.stride,
                    padding: c.padding,
                    weight_offset,
                    weight_len,
                }
            }
            Layer::BatchNorm(b) => {
                let (weight_offset, weight_len) =
                    self.push(&[&b.gamma, &b.beta, &b.running_mean, &b.running_var]);
                ManifestLayer::BatchNorm {
                    channels: b.channels,
                    eps: b.eps,
                    weight_offset,
                    weight_len,
                }
            }
            Layer::Relu => ManifestLayer::Relu {
                weight_offset: start,
                weight_len: 0,
            },
            Layer::MaxPool(p) => ManifestLayer::MaxPool {
                kernel: p.kernel,
                stride: p.stride,
                padding: p.padding,
                weight_offset: start,
                weight_len: 0,
            },
            Layer::GlobalAvgPool => ManifestLayer::GlobalAvgPool {
                weight_offset: start,
                weight_len: 0,
            },
            Layer::Residual(r) => {
                let main = r.main.iter().map(|l| self.entry(l)).collect();
                let projection = r
                    .projection
                    .as_ref()
                    .map(|p| p.iter().map(|l| self.entry(l)).collect());
                ManifestLayer::Residual {
                    main,
                    projection,
                    weight_offset: start,
                    weight_len: self.blob.len() - start,
                }
            }
            Layer::Linear(l) => {
                let (weight_offset, weight_len) = self.push(&[&l.weight, &l.bias]);
                ManifestLayer::Linear {
                    in_features: l.in_features,
                    out_features: l.out_features,
                    weight_offset,
                    weight_len,
                }
            }
        };
        serde_json::to_value(entry).expect("manifest entries serialize")
    }
}

/// Serializes a graph to `(manifest JSON bytes, blob bytes)`.
pub fn encode_model(g: &ModelGraph) -> (Vec<u8>, Vec<u8>) {
    let mut writer = BlobWriter { blob: Vec::new() };
    let layers = g.layers.iter().map(|l| writer.entry(l)).collect();
    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        version: 1,
        dtype: "f32".into(),
        endianness: "little".into(),
        input_shape: g.input_shape,
        input_mean: g.input_mean.clone(),
        num_classes: g.num_classes(),
        total_params: writer.blob.len() / 4,
        layers,
    };
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    (json, writer.blob)
}

pub fn save_model(g: &ModelGraph, manifest_path: &Path, blob_path: &Path) -> Result<()> {
    let (json, blob) = encode_model(g);
    fs::write(manifest_path, json).map_err(|e| Error::io(manifest_path, e))?;
    fs::write(blob_path, blob).map_err(|e| Error::io(blob_path, e))?;
    Ok(())
}
