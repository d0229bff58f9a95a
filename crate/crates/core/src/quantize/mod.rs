//! Fixed-point embedding of float models into `Z_p`.
//!
//! Weights and inputs are held at scale `2^l`, biases at `2^(2l)`, so every
//! linear output lands at scale `2^(2l)` and is brought back to `2^l` by the
//! activation step. Rounding is half away from zero throughout.

mod forward;
mod range;

pub use forward::{walk, LinearExecutor, Scale, Tensor, TrustedExecutor};
pub use range::{range_check, RangeEntry, RangeReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldError, FieldParams, FieldTensor};
use crate::kernels::{round_shift, KernelError, OpCounter};
use crate::model::{
    ActivationKind, LayerSpec, LinearOp, ModelError, ModelGraph, PoolKind, QuantizationInfo,
};

#[derive(Debug, Error)]
pub enum QuantError {
    #[error("fractional bits must lie in 1..={max}, got {got}")]
    FracBits { got: u32, max: u32 },
    #[error("{x} * 2^{bits} is not finite or not below 2^52")]
    Overflow { x: f64, bits: u32 },
    #[error(
        "element {index} quantizes to {value}, outside the field's centered range (|v| < {bound})"
    )]
    OutOfRange {
        index: usize,
        value: i64,
        bound: i64,
    },
    #[error("input has {actual} values, model expects {expected}")]
    InputShape { expected: usize, actual: usize },
    #[error("model is invalid: {0}")]
    Invalid(String),
    #[error("probe set is empty")]
    NoProbes,
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Fixed-point scheme: `l` fractional bits over the given field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantScheme {
    frac_bits: u32,
    params: FieldParams,
}

impl Default for QuantScheme {
    fn default() -> Self {
        QuantScheme {
            frac_bits: 8,
            params: FieldParams::default(),
        }
    }
}

impl QuantScheme {
    /// `2l` must leave room below the modulus for at least one unit.
    pub fn new(frac_bits: u32, params: FieldParams) -> Result<Self, QuantError> {
        let max = (31 - params.modulus().leading_zeros()) / 2;
        if frac_bits == 0 || frac_bits > max {
            return Err(QuantError::FracBits {
                got: frac_bits,
                max,
            });
        }
        Ok(QuantScheme { frac_bits, params })
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn bias_frac_bits(&self) -> u32 {
        2 * self.frac_bits
    }

    pub fn params(&self) -> &FieldParams {
        &self.params
    }

    pub fn info(&self) -> QuantizationInfo {
        QuantizationInfo {
            frac_bits: self.frac_bits,
            modulus: self.params.modulus(),
        }
    }

    fn bound(&self) -> i64 {
        i64::from((self.params.modulus() - 1) / 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    Weight,
    Input,
    Bias,
}

/// `round(2^l x)`, ties away from zero.
pub fn fp_round(x: f64, bits: u32) -> Result<i64, QuantError> {
    let v = x * f64::from(1u32 << bits);
    if !v.is_finite() || v.abs() >= 4_503_599_627_370_496.0 {
        return Err(QuantError::Overflow { x, bits });
    }
    Ok(v.round() as i64)
}

fn quantize_values(
    values: impl Iterator<Item = f64>,
    bits: u32,
    bound: i64,
) -> Result<Vec<i64>, QuantError> {
    values
        .enumerate()
        .map(|(index, x)| {
            let value = fp_round(x, bits)?;
            if value.abs() >= bound {
                return Err(QuantError::OutOfRange {
                    index,
                    value,
                    bound,
                });
            }
            Ok(value)
        })
        .collect()
}

/// Quantizes `t` for `role` and embeds it as centered residues.
pub fn quantize_tensor(
    t: &[f64],
    shape: Vec<usize>,
    role: TensorRole,
    scheme: &QuantScheme,
) -> Result<FieldTensor, QuantError> {
    let bits = match role {
        TensorRole::Weight | TensorRole::Input => scheme.frac_bits,
        TensorRole::Bias => scheme.bias_frac_bits(),
    };
    let q = quantize_values(t.iter().copied(), bits, scheme.bound())?;
    Ok(FieldTensor::from_integers(shape, &q, &scheme.params)?)
}

/// Brings a scale-`2l` tensor back to scale `l`.
pub fn requantize_output(y: &FieldTensor, scheme: &QuantScheme) -> FieldTensor {
    let q: Vec<i64> = y
        .to_i64()
        .iter()
        .map(|&v| round_shift(v, scheme.frac_bits))
        .collect();
    FieldTensor::from_integers(y.shape().to_vec(), &q, &scheme.params)
        .expect("rescaling shrinks magnitudes")
}

/// Real value of residues held at `2^-bits` resolution.
pub fn dequantize(values: &[i64], bits: u32) -> Vec<f64> {
    let scale = f64::from(1u32 << bits);
    values.iter().map(|&v| v as f64 / scale).collect()
}

/// A quantized linear layer. `index` is its position among the model's
/// linear layers in execution order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QLinear {
    pub index: usize,
    pub op: LinearOp,
    /// Scale `l`.
    pub weight: Vec<i64>,
    /// Scale `2l`.
    pub bias: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum QLayer {
    Linear(QLinear),
    Activation(ActivationKind),
    Pool(PoolKind),
    Residual {
        main: Vec<QLayer>,
        shortcut: Vec<QLayer>,
        merge: ActivationKind,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedModel {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<QLayer>,
    pub scheme: QuantScheme,
    /// Set by [`QuantizedModel::certify`] when the range check passes.
    pub certificate: Option<RangeReport>,
}

impl QuantizedModel {
    pub fn quantize(model: &ModelGraph, scheme: QuantScheme) -> Result<Self, QuantError> {
        if let Some(v) = model.validate().first() {
            return Err(QuantError::Invalid(v.to_string()));
        }
        fn convert(
            layers: &[LayerSpec],
            scheme: &QuantScheme,
            next: &mut usize,
        ) -> Result<Vec<QLayer>, QuantError> {
            layers
                .iter()
                .map(|l| {
                    Ok(match l {
                        LayerSpec::Linear(lin) => {
                            let weight = quantize_values(
                                lin.weight.iter().map(|&v| f64::from(v)),
                                scheme.frac_bits,
                                scheme.bound(),
                            )?;
                            let bias = quantize_values(
                                lin.bias.iter().map(|&v| f64::from(v)),
                                scheme.bias_frac_bits(),
                                scheme.bound(),
                            )?;
                            *next += 1;
                            QLayer::Linear(QLinear {
                                index: *next - 1,
                                op: lin.op,
                                weight,
                                bias,
                            })
                        }
                        LayerSpec::Activation(a) => QLayer::Activation(*a),
                        LayerSpec::Pool(p) => QLayer::Pool(*p),
                        LayerSpec::Residual(b) => QLayer::Residual {
                            main: convert(&b.main, scheme, next)?,
                            shortcut: convert(&b.shortcut, scheme, next)?,
                            merge: b.merge,
                        },
                    })
                })
                .collect()
        }
        let mut next = 0;
        let layers = convert(&model.layers, &scheme, &mut next)?;
        Ok(QuantizedModel {
            name: model.name.clone(),
            input_shape: model.input_shape.clone(),
            layers,
            scheme,
            certificate: None,
        })
    }

    /// Linear layers ordered by index.
    pub fn linear_layers(&self) -> Vec<&QLinear> {
        fn collect<'a>(layers: &'a [QLayer], out: &mut Vec<&'a QLinear>) {
            for l in layers {
                match l {
                    QLayer::Linear(q) => out.push(q),
                    QLayer::Residual { main, shortcut, .. } => {
                        collect(main, out);
                        collect(shortcut, out);
                    }
                    _ => {}
                }
            }
        }
        let mut out = Vec::new();
        collect(&self.layers, &mut out);
        out
    }

    pub fn linear_count(&self) -> usize {
        self.linear_layers().len()
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn quantize_input(&self, x: &[f32]) -> Result<Vec<i64>, QuantError> {
        if x.len() != self.input_len() {
            return Err(QuantError::InputShape {
                expected: self.input_len(),
                actual: x.len(),
            });
        }
        quantize_values(
            x.iter().map(|&v| f64::from(v)),
            self.scheme.frac_bits,
            self.scheme.bound(),
        )
    }

    /// Runs the range check on `probes` and keeps the report as the
    /// model's certificate when it passes.
    pub fn certify(&mut self, probes: &[Vec<f32>]) -> Result<&RangeReport, QuantError> {
        let report = range::check_quantized(self, probes)?;
        self.certificate = Some(report);
        Ok(self.certificate.as_ref().expect("just set"))
    }

    pub fn is_certified(&self) -> bool {
        self.certificate.as_ref().is_some_and(|r| r.pass)
    }

    /// Exact integer inference; output at scale `l`.
    pub fn forward(&self, x: &[i64]) -> Result<Vec<i64>, QuantError> {
        let mut exec = TrustedExecutor::new(self.scheme.params, OpCounter::new());
        let out = walk(
            &self.layers,
            Tensor::input(x.to_vec(), self.input_shape.clone()),
            &self.scheme,
            &mut exec,
        )?;
        Ok(out.into_single(&self.scheme).into_row())
    }

    /// Float input to dequantized float output.
    pub fn infer_f64(&self, x: &[f32]) -> Result<Vec<f64>, QuantError> {
        let q = self.quantize_input(x)?;
        Ok(dequantize(&self.forward(&q)?, self.scheme.frac_bits))
    }
}
