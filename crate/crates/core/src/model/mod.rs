//! Model representation: an ordered list of layers with float weights.
//!
//! Tensors are row-major. Spatial activations use `(h, w, c)` layout; fully
//! connected layers flatten whatever they receive. Kernel layouts:
//!
//! | op        | weight                      | bias    |
//! |-----------|-----------------------------|---------|
//! | FC        | `(h_in, h_out)`             | `h_out` |
//! | Conv2D    | `(k, k, c_in, c_out)`       | `c_out` |
//! | Depthwise | `(k, k, c_in)`              | `c_in`  |
//! | Pointwise | `(c_in, c_out)`             | `c_out` |

mod format;
mod presets;
mod reference;

pub use format::{
    load_model, load_quantization, save_model, save_model_with_quantization, QuantizationInfo,
    FORMAT_VERSION,
};
pub use presets::{make_preset, Preset};
pub use reference::forward_f64;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("unknown layer kind `{0}`")]
    UnknownLayerKind(String),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("layer {layer}: {what} has {actual} values, expected {expected}")]
    ShapeMismatch {
        layer: usize,
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("weight blob is corrupt: {0}")]
    CorruptBlob(String),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    Relu6,
    None,
}

/// 2x2 pooling with stride 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Same,
    Valid,
}

/// Which of the four linear operator families a layer belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearKind {
    Fc,
    Conv,
    Depthwise,
    Pointwise,
}

impl LinearKind {
    pub const ALL: [LinearKind; 4] = [
        LinearKind::Fc,
        LinearKind::Conv,
        LinearKind::Depthwise,
        LinearKind::Pointwise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LinearKind::Fc => "fc",
            LinearKind::Conv => "conv",
            LinearKind::Depthwise => "depthwise",
            LinearKind::Pointwise => "pointwise",
        }
    }
}

/// Geometry of a 2-D window operator along one spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub out: usize,
    pub pad_before: usize,
}

pub fn window(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<Window> {
    if kernel == 0 || stride == 0 || input == 0 {
        return None;
    }
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let needed = ((out - 1) * stride + kernel).saturating_sub(input);
            Some(Window {
                out,
                pad_before: needed / 2,
            })
        }
        Padding::Valid => {
            if kernel > input {
                return None;
            }
            Some(Window {
                out: (input - kernel) / stride + 1,
                pad_before: 0,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LinearOp {
    Fc {
        h_in: usize,
        h_out: usize,
    },
    Conv2d {
        h: usize,
        w: usize,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    Depthwise {
        h: usize,
        w: usize,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    Pointwise {
        h: usize,
        w: usize,
        c_in: usize,
        c_out: usize,
    },
}

impl LinearOp {
    pub fn conv(
        h: usize,
        w: usize,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        LinearOp::Conv2d {
            h,
            w,
            c_in,
            c_out,
            kernel,
            stride,
            padding: Padding::Same,
        }
    }

    pub fn depthwise(h: usize, w: usize, c: usize, kernel: usize, stride: usize) -> Self {
        LinearOp::Depthwise {
            h,
            w,
            c_in: c,
            c_out: c,
            kernel,
            stride,
            padding: Padding::Same,
        }
    }

    pub fn kind(&self) -> LinearKind {
        match self {
            LinearOp::Fc { .. } => LinearKind::Fc,
            LinearOp::Conv2d { .. } => LinearKind::Conv,
            LinearOp::Depthwise { .. } => LinearKind::Depthwise,
            LinearOp::Pointwise { .. } => LinearKind::Pointwise,
        }
    }

    /// Output spatial size `(h_out, w_out)` for window operators.
    pub fn out_hw(&self) -> Option<(usize, usize)> {
        match *self {
            LinearOp::Fc { .. } => None,
            LinearOp::Pointwise { h, w, .. } => Some((h, w)),
            LinearOp::Conv2d {
                h,
                w,
                kernel,
                stride,
                padding,
                ..
            }
            | LinearOp::Depthwise {
                h,
                w,
                kernel,
                stride,
                padding,
                ..
            } => {
                let wh = window(h, kernel, stride, padding)?;
                let ww = window(w, kernel, stride, padding)?;
                Some((wh.out, ww.out))
            }
        }
    }

    pub fn input_shape(&self) -> Vec<usize> {
        match *self {
            LinearOp::Fc { h_in, .. } => vec![h_in],
            LinearOp::Conv2d { h, w, c_in, .. }
            | LinearOp::Depthwise { h, w, c_in, .. }
            | LinearOp::Pointwise { h, w, c_in, .. } => vec![h, w, c_in],
        }
    }

    pub fn output_shape(&self) -> Vec<usize> {
        match *self {
            LinearOp::Fc { h_out, .. } => vec![h_out],
            LinearOp::Pointwise { h, w, c_out, .. } => vec![h, w, c_out],
            LinearOp::Conv2d { c_out, .. } | LinearOp::Depthwise { c_out, .. } => {
                let (ho, wo) = self.out_hw().unwrap_or((0, 0));
                vec![ho, wo, c_out]
            }
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape().iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match *self {
            LinearOp::Fc { h_in, h_out } => vec![h_in, h_out],
            LinearOp::Conv2d {
                c_in,
                c_out,
                kernel,
                ..
            } => vec![kernel, kernel, c_in, c_out],
            LinearOp::Depthwise { c_in, kernel, .. } => vec![kernel, kernel, c_in],
            LinearOp::Pointwise { c_in, c_out, .. } => vec![c_in, c_out],
        }
    }

    pub fn weight_len(&self) -> usize {
        self.weight_shape().iter().product()
    }

    pub fn bias_len(&self) -> usize {
        match *self {
            LinearOp::Fc { h_out, .. } => h_out,
            LinearOp::Conv2d { c_out, .. } | LinearOp::Pointwise { c_out, .. } => c_out,
            LinearOp::Depthwise { c_in, .. } => c_in,
        }
    }

    /// Kernel side length; 1 for FC and pointwise.
    pub fn kernel_size(&self) -> usize {
        match *self {
            LinearOp::Conv2d { kernel, .. } | LinearOp::Depthwise { kernel, .. } => kernel,
            _ => 1,
        }
    }

    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.input_len() == 0 || self.output_len() == 0 {
            out.push("empty input or output".to_string());
        }
        match *self {
            LinearOp::Depthwise { c_in, c_out, .. } if c_in != c_out => {
                out.push(format!(
                    "depthwise convolution needs c_out = c_in (got {c_out} vs {c_in})"
                ));
            }
            LinearOp::Conv2d { stride, kernel, .. }
            | LinearOp::Depthwise { stride, kernel, .. } => {
                if !(1..=2).contains(&stride) {
                    out.push(format!("stride {stride} unsupported (1 or 2)"));
                }
                if kernel % 2 == 0 {
                    out.push(format!("even kernel size {kernel} unsupported"));
                }
                if self.out_hw().is_none() {
                    out.push("kernel larger than input".to_string());
                }
            }
            _ => {}
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLayer {
    pub op: LinearOp,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl LinearLayer {
    pub fn zeros(op: LinearOp) -> Self {
        LinearLayer {
            op,
            weight: vec![0.0; op.weight_len()],
            bias: vec![0.0; op.bias_len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlock {
    /// Main path `f1`.
    pub main: Vec<LayerSpec>,
    /// Shortcut path `f2`; empty means identity.
    pub shortcut: Vec<LayerSpec>,
    /// Activation applied to `f1(x) + f2(x)`.
    pub merge: ActivationKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Linear(LinearLayer),
    Activation(ActivationKind),
    Pool(PoolKind),
    Residual(ResidualBlock),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

/// A failed structural check, located by a path such as `layers[3].main[1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl ModelGraph {
    /// Number of linear layers, residual branches included.
    pub fn linear_count(&self) -> usize {
        self.linear_layers().len()
    }

    /// Linear layers in execution order (main path before shortcut).
    pub fn linear_layers(&self) -> Vec<&LinearLayer> {
        fn walk<'a>(layers: &'a [LayerSpec], out: &mut Vec<&'a LinearLayer>) {
            for l in layers {
                match l {
                    LayerSpec::Linear(lin) => out.push(lin),
                    LayerSpec::Residual(b) => {
                        walk(&b.main, out);
                        walk(&b.shortcut, out);
                    }
                    _ => {}
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.layers, &mut out);
        out
    }

    pub fn output_shape(&self) -> Option<Vec<usize>> {
        let mut v = Vec::new();
        propagate(&self.layers, self.input_shape.clone(), "layers", &mut v).filter(|_| v.is_empty())
    }

    /// Empty iff every structural invariant holds.
    pub fn validate(&self) -> Vec<Violation> {
        let mut violations = Vec::new();
        if self.input_shape.iter().product::<usize>() == 0 {
            violations.push(Violation {
                path: "input_shape".into(),
                message: "empty input".into(),
            });
        }
        propagate(
            &self.layers,
            self.input_shape.clone(),
            "layers",
            &mut violations,
        );
        violations
    }
}

fn same_elements(a: &[usize], b: &[usize]) -> bool {
    a.iter().product::<usize>() == b.iter().product::<usize>()
}

/// Walks `layers` from `shape`, recording violations. Returns the output
/// shape when it can be determined.
fn propagate(
    layers: &[LayerSpec],
    mut shape: Vec<usize>,
    prefix: &str,
    out: &mut Vec<Violation>,
) -> Option<Vec<usize>> {
    for (i, layer) in layers.iter().enumerate() {
        let path = format!("{prefix}[{i}]");
        let mut fail = |message: String| {
            out.push(Violation {
                path: path.clone(),
                message,
            })
        };
        match layer {
            LayerSpec::Linear(lin) => {
                for p in lin.op.problems() {
                    fail(p);
                }
                let want = lin.op.input_shape();
                let ok = match lin.op {
                    LinearOp::Fc { .. } => same_elements(&want, &shape),
                    _ => want == shape,
                };
                if !ok {
                    fail(format!("expects input {want:?}, receives {shape:?}"));
                }
                if lin.weight.len() != lin.op.weight_len() {
                    fail(format!(
                        "weight has {} values, expected {}",
                        lin.weight.len(),
                        lin.op.weight_len()
                    ));
                }
                if lin.bias.len() != lin.op.bias_len() {
                    fail(format!(
                        "bias has {} values, expected {}",
                        lin.bias.len(),
                        lin.op.bias_len()
                    ));
                }
                if lin.weight.iter().chain(&lin.bias).any(|v| !v.is_finite()) {
                    fail("non-finite parameter".to_string());
                }
                shape = lin.op.output_shape();
            }
            LayerSpec::Activation(_) => {}
            LayerSpec::Pool(_) => {
                if shape.len() != 3 || !shape[0].is_multiple_of(2) || !shape[1].is_multiple_of(2) || shape[0] == 0 {
                    fail(format!(
                        "2x2 pooling needs an (even h, even w, c) input, receives {shape:?}"
                    ));
                    return None;
                }
                shape = vec![shape[0] / 2, shape[1] / 2, shape[2]];
            }
            LayerSpec::Residual(block) => {
                let main = propagate(&block.main, shape.clone(), &format!("{path}.main"), out);
                let short = propagate(
                    &block.shortcut,
                    shape.clone(),
                    &format!("{path}.shortcut"),
                    out,
                );
                match (main, short) {
                    (Some(a), Some(b)) if a == b => shape = a,
                    (Some(a), Some(b)) => {
                        out.push(Violation {
                            path: path.clone(),
                            message: format!(
                                "residual branches disagree: main {a:?}, shortcut {b:?}"
                            ),
                        });
                        return None;
                    }
                    _ => return None,
                }
            }
        }
    }
    Some(shape)
}
