//! On-disk model format: a JSON manifest plus one raw weight blob.
//!
//! The blob is the concatenation of every linear layer's weight tensor and
//! then its bias tensor, row-major little-endian `f32`, in manifest order
//! (depth first; a residual block's main path precedes its shortcut). The
//! manifest records each tensor's byte offset and shape, the blob's total
//! length and its SHA-256 digest.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "name": "tiny",
//!   "input_shape": [2],
//!   "blob": "tiny.bin",
//!   "blob_bytes": 24,
//!   "blob_sha256": "…",
//!   "quantization": { "frac_bits": 8, "modulus": 16777213 },
//!   "layers": [
//!     { "kind": "fc", "h_in": 2, "h_out": 2,
//!       "weight": { "offset": 0, "shape": [2, 2] },
//!       "bias": { "offset": 16, "shape": [2] } },
//!     { "kind": "activation", "activation": "relu" }
//!   ]
//! }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    ActivationKind, LayerSpec, LinearLayer, LinearOp, ModelError, ModelGraph, Padding, PoolKind,
    ResidualBlock,
};

pub const FORMAT_VERSION: u32 = 1;

const KNOWN_KINDS: [&str; 7] = [
    "fc",
    "conv2d",
    "depthwise",
    "pointwise",
    "activation",
    "pool",
    "residual_block",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizationInfo {
    pub frac_bits: u32,
    pub modulus: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    name: String,
    input_shape: Vec<usize>,
    blob: String,
    blob_bytes: u64,
    blob_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quantization: Option<QuantizationInfo>,
    layers: Vec<ManifestLayer>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlobRef {
    offset: u64,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ManifestLayer {
    Fc {
        h_in: usize,
        h_out: usize,
        weight: BlobRef,
        bias: BlobRef,
    },
    Conv2d {
        h: usize,
        w: usize,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        weight: BlobRef,
        bias: BlobRef,
    },
    Depthwise {
        h: usize,
        w: usize,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        weight: BlobRef,
        bias: BlobRef,
    },
    Pointwise {
        h: usize,
        w: usize,
        c_in: usize,
        c_out: usize,
        weight: BlobRef,
        bias: BlobRef,
    },
    Activation {
        activation: ActivationKind,
    },
    Pool {
        pool: PoolKind,
    },
    ResidualBlock {
        main: Vec<ManifestLayer>,
        shortcut: Vec<ManifestLayer>,
        merge: ActivationKind,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn push_tensor(blob: &mut Vec<u8>, values: &[f32], shape: Vec<usize>) -> BlobRef {
    let offset = blob.len() as u64;
    for v in values {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    BlobRef { offset, shape }
}

fn encode(layers: &[LayerSpec], blob: &mut Vec<u8>) -> Vec<ManifestLayer> {
    layers
        .iter()
        .map(|layer| match layer {
            LayerSpec::Linear(lin) => {
                let weight = push_tensor(blob, &lin.weight, lin.op.weight_shape());
                let bias = push_tensor(blob, &lin.bias, vec![lin.op.bias_len()]);
                match lin.op {
                    LinearOp::Fc { h_in, h_out } => ManifestLayer::Fc {
                        h_in,
                        h_out,
                        weight,
                        bias,
                    },
                    LinearOp::Conv2d {
                        h,
                        w,
                        c_in,
                        c_out,
                        kernel,
                        stride,
                        padding,
                    } => ManifestLayer::Conv2d {
                        h,
                        w,
                        c_in,
                        c_out,
                        kernel,
                        stride,
                        padding,
                        weight,
                        bias,
                    },
                    LinearOp::Depthwise {
                        h,
                        w,
                        c_in,
                        c_out,
                        kernel,
                        stride,
                        padding,
                    } => ManifestLayer::Depthwise {
                        h,
                        w,
                        c_in,
                        c_out,
                        kernel,
                        stride,
                        padding,
                        weight,
                        bias,
                    },
                    LinearOp::Pointwise { h, w, c_in, c_out } => ManifestLayer::Pointwise {
                        h,
                        w,
                        c_in,
                        c_out,
                        weight,
                        bias,
                    },
                }
            }
            LayerSpec::Activation(a) => ManifestLayer::Activation { activation: *a },
            LayerSpec::Pool(p) => ManifestLayer::Pool { pool: *p },
            LayerSpec::Residual(b) => ManifestLayer::ResidualBlock {
                main: encode(&b.main, blob),
                shortcut: encode(&b.shortcut, blob),
                merge: b.merge,
            },
        })
        .collect()
}

pub fn save_model(model: &ModelGraph, path: &Path) -> Result<(), ModelError> {
    save_model_with_quantization(model, None, path)
}

/// Writes `<path>` and a sibling `<stem>.bin` blob.
pub fn save_model_with_quantization(
    model: &ModelGraph,
    quantization: Option<QuantizationInfo>,
    path: &Path,
) -> Result<(), ModelError> {
    let mut blob = Vec::new();
    let layers = encode(&model.layers, &mut blob);
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let blob_name = format!("{stem}.bin");
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        name: model.name.clone(),
        input_shape: model.input_shape.clone(),
        blob: blob_name.clone(),
        blob_bytes: blob.len() as u64,
        blob_sha256: hex::encode(Sha256::digest(&blob)),
        quantization,
        layers,
    };
    let blob_path = blob_path(path, &blob_name);
    fs::write(&blob_path, &blob).map_err(io_err(&blob_path))?;
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(path, text).map_err(io_err(path))?;
    Ok(())
}

fn blob_path(manifest: &Path, blob: &str) -> PathBuf {
    manifest
        .parent()
        .map(|d| d.join(blob))
        .unwrap_or_else(|| PathBuf::from(blob))
}

fn check_kinds(v: &serde_json::Value) -> Result<(), ModelError> {
    let Some(layers) = v.as_array() else {
        return Ok(());
    };
    for layer in layers {
        match layer.get("kind").and_then(|k| k.as_str()) {
            Some(k) if KNOWN_KINDS.contains(&k) => {}
            Some(k) => return Err(ModelError::UnknownLayerKind(k.to_string())),
            None => return Err(ModelError::UnknownLayerKind("<missing>".to_string())),
        }
        for branch in ["main", "shortcut"] {
            if let Some(b) = layer.get(branch) {
                check_kinds(b)?;
            }
        }
    }
    Ok(())
}

struct Decoder<'a> {
    blob: &'a [u8],
    index: usize,
}

impl Decoder<'_> {
    fn tensor(
        &self,
        r: &BlobRef,
        what: &'static str,
        expected: Vec<usize>,
    ) -> Result<Vec<f32>, ModelError> {
        let len: usize = r.shape.iter().product();
        if r.shape != expected {
            return Err(ModelError::ShapeMismatch {
                layer: self.index,
                what,
                expected: expected.iter().product(),
                actual: len,
            });
        }
        let start = r.offset as usize;
        let end = start + 4 * len;
        if end > self.blob.len() {
            return Err(ModelError::CorruptBlob(format!(
                "layer {} {what} spans bytes {start}..{end} of a {}-byte blob",
                self.index,
                self.blob.len()
            )));
        }
        Ok(self.blob[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn linear(
        &mut self,
        op: LinearOp,
        weight: &BlobRef,
        bias: &BlobRef,
    ) -> Result<LayerSpec, ModelError> {
        let w = self.tensor(weight, "weight", op.weight_shape())?;
        let b = self.tensor(bias, "bias", vec![op.bias_len()])?;
        self.index += 1;
        Ok(LayerSpec::Linear(LinearLayer {
            op,
            weight: w,
            bias: b,
        }))
    }

    fn layers(&mut self, layers: &[ManifestLayer]) -> Result<Vec<LayerSpec>, ModelError> {
        layers
            .iter()
            .map(|l| match l {
                ManifestLayer::Fc {
                    h_in,
                    h_out,
                    weight,
                    bias,
                } => self.linear(
                    LinearOp::Fc {
                        h_in: *h_in,
                        h_out: *h_out,
                    },
                    weight,
                    bias,
                ),
                &ManifestLayer::Conv2d {
                    h,
                    w,
                    c_in,
                    c_out,
                    kernel,
                    stride,
                    padding,
                    ref weight,
                    ref bias,
                } => self.linear(
                    LinearOp::Conv2d {
                        h,
                        w,
                        c_in,
                        c_out,
                        kernel,
                        stride,
                        padding,
                    },
                    weight,
                    bias,
                ),
                &ManifestLayer::Depthwise {
                    h,
                    w,
                    c_in,
                    c_out,
                    kernel,
                    stride,
                    padding,
                    ref weight,
                    ref bias,
                } => self.linear(
                    LinearOp::Depthwise {
                        h,
                        w,
                        c_in,
                        c_out,
                        kernel,
                        stride,
                        padding,
                    },
                    weight,
                    bias,
                ),
                &ManifestLayer::Pointwise {
                    h,
                    w,
                    c_in,
                    c_out,
                    ref weight,
                    ref bias,
                } => self.linear(LinearOp::Pointwise { h, w, c_in, c_out }, weight, bias),
                ManifestLayer::Activation { activation } => Ok(LayerSpec::Activation(*activation)),
                ManifestLayer::Pool { pool } => Ok(LayerSpec::Pool(*pool)),
                ManifestLayer::ResidualBlock {
                    main,
                    shortcut,
                    merge,
                } => Ok(LayerSpec::Residual(ResidualBlock {
                    main: self.layers(main)?,
                    shortcut: self.layers(shortcut)?,
                    merge: *merge,
                })),
            })
            .collect()
    }
}

fn read_manifest(path: &Path) -> Result<Manifest, ModelError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if let Some(v) = value.get("format_version").and_then(|v| v.as_u64()) {
        if v != u64::from(FORMAT_VERSION) {
            return Err(ModelError::UnsupportedVersion(v as u32));
        }
    }
    if let Some(layers) = value.get("layers") {
        check_kinds(layers)?;
    }
    Ok(serde_json::from_value(value)?)
}

pub fn load_model(path: &Path) -> Result<ModelGraph, ModelError> {
    let manifest = read_manifest(path)?;
    let blob_path = blob_path(path, &manifest.blob);
    let blob = fs::read(&blob_path).map_err(io_err(&blob_path))?;
    if blob.len() as u64 != manifest.blob_bytes {
        return Err(ModelError::CorruptBlob(format!(
            "blob has {} bytes, manifest declares {}",
            blob.len(),
            manifest.blob_bytes
        )));
    }
    if hex::encode(Sha256::digest(&blob)) != manifest.blob_sha256 {
        return Err(ModelError::CorruptBlob("digest mismatch".to_string()));
    }
    let layers = Decoder {
        blob: &blob,
        index: 0,
    }
    .layers(&manifest.layers)?;
    let model = ModelGraph {
        name: manifest.name,
        input_shape: manifest.input_shape,
        layers,
    };
    let violations = model.validate();
    if let Some(v) = violations.first() {
        return Err(ModelError::Invalid(v.to_string()));
    }
    Ok(model)
}

/// The quantization parameters recorded in a manifest, if any.
pub fn load_quantization(path: &Path) -> Result<Option<QuantizationInfo>, ModelError> {
    Ok(read_manifest(path)?.quantization)
}
