use serde::{Deserialize, Serialize};

use crate::kernels::{linear_forward_wide, KernelError};
use crate::model::ModelGraph;

use super::{walk, LinearExecutor, QLinear, QuantError, QuantScheme, QuantizedModel, Tensor};

/// One certified site: a linear layer's output or a residual merge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeEntry {
    pub site: String,
    /// Largest `|value|` seen on any probe, computed without reduction.
    pub observed_max: i64,
    /// Worst case `max_j (sum_i |W_ij| * max|x| + |b_j|)` given the largest
    /// input magnitude the probes produced; `None` for merges.
    pub analytic_bound: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeReport {
    pub limit: i64,
    pub probes: usize,
    pub entries: Vec<RangeEntry>,
    pub pass: bool,
}

struct Probe {
    limit: i64,
    observed: Vec<i64>,
    max_input: Vec<i64>,
    merges: Vec<(usize, i64)>,
}

impl LinearExecutor for Probe {
    type Error = KernelError;

    fn linear(&mut self, layer: &QLinear, xs: &[Vec<i64>]) -> Result<Vec<Vec<i64>>, KernelError> {
        let i = layer.index;
        let mut out = Vec::with_capacity(xs.len());
        for x in xs {
            let y = linear_forward_wide(&layer.op, x, &layer.weight, Some(&layer.bias))?;
            self.max_input[i] = self.max_input[i].max(x.iter().map(|v| v.abs()).max().unwrap_or(0));
            self.observed[i] = self.observed[i].max(y.iter().map(|v| v.abs()).max().unwrap_or(0));
            // Once a value leaves the field the remaining layers would see
            // wrapped data anyway; reducing keeps the wide kernel in range.
            let m = self.limit * 2 + 1;
            out.push(
                y.into_iter()
                    .map(|v| {
                        if v.abs() > self.limit {
                            crate::kernels::center(v, m)
                        } else {
                            v
                        }
                    })
                    .collect(),
            );
        }
        Ok(out)
    }

    fn reduces(&self) -> bool {
        false
    }

    fn observe_merge(&mut self, after_layer: usize, sum: &[i64]) {
        let mx = sum.iter().map(|v| v.abs()).max().unwrap_or(0);
        match self.merges.iter_mut().find(|(l, _)| *l == after_layer) {
            Some(e) => e.1 = e.1.max(mx),
            None => self.merges.push((after_layer, mx)),
        }
    }
}

fn analytic(layer: &QLinear, max_input: i64) -> f64 {
    let c = layer.op.bias_len();
    let w = &layer.weight;
    let x = max_input as f64;
    let taps = layer.op.weight_len() / c.max(1);
    (0..c)
        .map(|j| {
            let col: f64 = match layer.op {
                // Depthwise weights are (k, k, c): channel j uses every c-th entry.
                crate::model::LinearOp::Depthwise { .. } => {
                    (0..taps).map(|t| w[t * c + j].abs() as f64).sum()
                }
                _ => (0..w.len() / c).map(|i| w[i * c + j].abs() as f64).sum(),
            };
            col * x + layer.bias[j].abs() as f64
        })
        .fold(0.0, f64::max)
}

pub(super) fn check_quantized(
    model: &QuantizedModel,
    probes: &[Vec<f32>],
) -> Result<RangeReport, QuantError> {
    if probes.is_empty() {
        return Err(QuantError::NoProbes);
    }
    let n = model.linear_count();
    let limit = i64::from((model.scheme.params().modulus() - 1) / 2);
    let mut probe = Probe {
        limit,
        observed: vec![0; n],
        max_input: vec![0; n],
        merges: Vec::new(),
    };
    for x in probes {
        let q = model.quantize_input(x)?;
        walk(
            &model.layers,
            Tensor::input(q, model.input_shape.clone()),
            &model.scheme,
            &mut probe,
        )?;
    }
    let mut entries: Vec<RangeEntry> = model
        .linear_layers()
        .iter()
        .map(|layer| {
            let i = layer.index;
            RangeEntry {
                site: format!("linear {i} ({})", layer.op.kind().name()),
                observed_max: probe.observed[i],
                analytic_bound: Some(analytic(layer, probe.max_input[i])),
                pass: probe.observed[i] < limit,
            }
        })
        .collect();
    for (after, mx) in probe.merges {
        entries.push(RangeEntry {
            site: format!("merge after linear {after}"),
            observed_max: mx,
            analytic_bound: None,
            pass: mx < limit,
        });
    }
    let pass = entries.iter().all(|e| e.pass);
    Ok(RangeReport {
        limit,
        probes: probes.len(),
        entries,
        pass,
    })
}

/// Quantizes `model` under `scheme` and certifies it on `probes`.
pub fn range_check(
    model: &ModelGraph,
    probes: &[Vec<f32>],
    scheme: &QuantScheme,
) -> Result<RangeReport, QuantError> {
    let q = QuantizedModel::quantize(model, *scheme)?;
    check_quantized(&q, probes)
}
