use crate::field::FieldParams;
use crate::kernels::{
    activation, apply_nonlinearity, center, lift_to_double_scale, linear_forward, pool, requantize,
    KernelError, LayerOps, OpCounter,
};

use super::{QLayer, QLinear, QuantScheme};

/// Fixed-point scale of a tensor flowing through the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// `2^l`: inputs and activations.
    Single,
    /// `2^(2l)`: linear-layer outputs before requantization.
    Double,
}

/// A batch of same-shape activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: Vec<Vec<i64>>,
    pub shape: Vec<usize>,
    pub scale: Scale,
}

impl Tensor {
    pub fn input(data: Vec<i64>, shape: Vec<usize>) -> Self {
        Tensor::batch(vec![data], shape)
    }

    pub fn batch(rows: Vec<Vec<i64>>, shape: Vec<usize>) -> Self {
        Tensor {
            rows,
            shape,
            scale: Scale::Single,
        }
    }

    fn map_rows(self, f: impl Fn(&[i64]) -> Vec<i64>, scale: Scale) -> Tensor {
        Tensor {
            rows: self.rows.iter().map(|r| f(r)).collect(),
            shape: self.shape,
            scale,
        }
    }

    /// Requantizes a scale-`2l` tensor; single-scale tensors pass through.
    pub fn into_single(self, scheme: &QuantScheme) -> Tensor {
        match self.scale {
            Scale::Single => self,
            Scale::Double => self.map_rows(|r| requantize(r, scheme.frac_bits()), Scale::Single),
        }
    }

    fn into_double(self, scheme: &QuantScheme, reduce: bool) -> Tensor {
        match self.scale {
            Scale::Double => self,
            Scale::Single if reduce => self.map_rows(
                |r| lift_to_double_scale(r, scheme.frac_bits(), scheme.params().modulus()),
                Scale::Double,
            ),
            Scale::Single => self.map_rows(
                |r| r.iter().map(|v| v << scheme.frac_bits()).collect(),
                Scale::Double,
            ),
        }
    }

    /// The single example of a batch of one.
    pub fn into_row(mut self) -> Vec<i64> {
        debug_assert_eq!(self.rows.len(), 1);
        self.rows.swap_remove(0)
    }
}

/// Supplies `x W + b` for each linear layer; the walker handles everything
/// else on the trusted side.
pub trait LinearExecutor {
    type Error: From<KernelError>;

    /// Returns the scale-`2l` outputs of `layer` on a batch of scale-`l`
    /// inputs.
    fn linear(&mut self, layer: &QLinear, xs: &[Vec<i64>]) -> Result<Vec<Vec<i64>>, Self::Error>;

    /// Whether intermediate sums are reduced modulo `p`. The range check
    /// turns this off to see true magnitudes.
    fn reduces(&self) -> bool {
        true
    }

    /// Sees each example's residual sum before its merge activation.
    fn observe_merge(&mut self, _after_layer: usize, _sum: &[i64]) {}
}

fn last_linear(layers: &[QLayer]) -> Option<usize> {
    layers.iter().rev().find_map(|l| match l {
        QLayer::Linear(q) => Some(q.index),
        QLayer::Residual { main, shortcut, .. } => {
            last_linear(shortcut).or_else(|| last_linear(main))
        }
        _ => None,
    })
}

/// Evaluates `layers` on `x`. Adjacent linear layers get an implicit
/// requantization between them; residual branches are summed at scale `2l`.
pub fn walk<E: LinearExecutor>(
    layers: &[QLayer],
    mut x: Tensor,
    scheme: &QuantScheme,
    exec: &mut E,
) -> Result<Tensor, E::Error> {
    let l = scheme.frac_bits();
    for layer in layers {
        x = match layer {
            QLayer::Linear(q) => {
                let input = x.into_single(scheme);
                let rows = exec.linear(q, &input.rows)?;
                Tensor {
                    rows,
                    shape: q.op.output_shape(),
                    scale: Scale::Double,
                }
            }
            QLayer::Activation(kind) => match x.scale {
                Scale::Double => x.map_rows(|r| activation(r, *kind, l), Scale::Single),
                Scale::Single => {
                    x.rows
                        .iter_mut()
                        .for_each(|r| apply_nonlinearity(r, *kind, l));
                    x
                }
            },
            QLayer::Pool(kind) => {
                let input = x.into_single(scheme);
                let shape = vec![input.shape[0] / 2, input.shape[1] / 2, input.shape[2]];
                let rows = input
                    .rows
                    .iter()
                    .map(|r| pool(r, &input.shape, *kind))
                    .collect();
                Tensor {
                    rows,
                    shape,
                    scale: Scale::Single,
                }
            }
            QLayer::Residual {
                main,
                shortcut,
                merge,
            } => {
                let reduce = exec.reduces();
                let a = walk(main, x.clone(), scheme, exec)?.into_double(scheme, reduce);
                let b = walk(shortcut, x, scheme, exec)?.into_double(scheme, reduce);
                let m = i64::from(scheme.params().modulus());
                let after = last_linear(shortcut)
                    .or_else(|| last_linear(main))
                    .unwrap_or(usize::MAX);
                let mut rows = Vec::with_capacity(a.rows.len());
                for (ra, rb) in a.rows.iter().zip(&b.rows) {
                    let sum: Vec<i64> = ra
                        .iter()
                        .zip(rb)
                        .map(|(u, v)| if reduce { center(u + v, m) } else { u + v })
                        .collect();
                    exec.observe_merge(after, &sum);
                    rows.push(activation(&sum, *merge, l));
                }
                Tensor {
                    rows,
                    shape: a.shape,
                    scale: Scale::Single,
                }
            }
        };
    }
    Ok(x)
}

/// All-trusted evaluation with the exact field kernels.
#[derive(Debug)]
pub struct TrustedExecutor {
    pub params: FieldParams,
    pub counter: OpCounter,
}

impl TrustedExecutor {
    pub fn new(params: FieldParams, counter: OpCounter) -> Self {
        TrustedExecutor { params, counter }
    }
}

impl LinearExecutor for TrustedExecutor {
    type Error = KernelError;

    fn linear(&mut self, layer: &QLinear, xs: &[Vec<i64>]) -> Result<Vec<Vec<i64>>, KernelError> {
        let mut ops = LayerOps::default();
        let ys = xs
            .iter()
            .map(|x| {
                linear_forward(
                    &layer.op,
                    x,
                    &layer.weight,
                    Some(&layer.bias),
                    &self.params,
                    &mut ops,
                )
            })
            .collect::<Result<_, _>>()?;
        self.counter.record(layer.index, ops);
        Ok(ys)
    }
}
