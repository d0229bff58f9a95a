use crate::field::{max_abs, FieldParams};
use crate::model::LinearOp;

use super::{expect_len, im2col, ConvGeom, KernelError, LayerOps};

/// Largest integer magnitude `f32` represents exactly in every position.
const F32_EXACT: f64 = 16_777_216.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UntrustedMode {
    /// Plaintext inputs at scale `l`, evaluated in single precision.
    UnblindedF32,
    /// Blinded inputs anywhere in `Z_p`, evaluated exactly in doubles.
    BlindedF64,
}

/// A layer's weights as the untrusted executor stores them.
#[derive(Debug, Clone, PartialEq)]
pub struct UntrustedWeights {
    pub w64: Vec<f64>,
    pub w32: Vec<f32>,
}

impl UntrustedWeights {
    pub fn new(w: &[i64]) -> Self {
        UntrustedWeights {
            w64: w.iter().map(|&v| v as f64).collect(),
            w32: w.iter().map(|&v| v as f32).collect(),
        }
    }
}

/// `(m x n) * (n x q)` over `Z_p` in doubles. Products are summed for as
/// many terms as the operand bounds allow before each reduction.
pub fn matmul_f64_deferred(
    a: &[f64],
    b: &[f64],
    m: usize,
    n: usize,
    q: usize,
    params: &FieldParams,
) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), n * q);
    let window = params.safe_window(max_abs(a), max_abs(b)).max(1);
    let mut out = vec![0.0f64; m * q];
    for i in 0..m {
        let row = &mut out[i * q..(i + 1) * q];
        for (blk, achunk) in a[i * n..(i + 1) * n].chunks(window).enumerate() {
            for (t, &av) in achunk.iter().enumerate() {
                let kk = blk * window + t;
                for (o, &bv) in row.iter_mut().zip(&b[kk * q..(kk + 1) * q]) {
                    *o += av * bv;
                }
            }
            row.iter_mut().for_each(|v| *v = params.reduce(*v));
        }
    }
    out
}

/// `(m x n) * (n x q)` accumulated in `f32` chunks that provably stay below
/// `2^24`, flushed into `f64`. Returns the exact unreduced integers.
pub fn matmul_f32_exact(
    a: &[f32],
    b: &[f32],
    m: usize,
    n: usize,
    q: usize,
) -> Result<Vec<f64>, KernelError> {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), n * q);
    let ma = a.iter().fold(0.0f64, |acc, v| acc.max(f64::from(v.abs())));
    let mb = b.iter().fold(0.0f64, |acc, v| acc.max(f64::from(v.abs())));
    let per = ma * mb;
    if per > F32_EXACT {
        return Err(KernelError::F32Precision(per));
    }
    let chunk = if per == 0.0 {
        n.max(1)
    } else {
        ((F32_EXACT / per) as usize).clamp(1, n.max(1))
    };
    let mut out = vec![0.0f64; m * q];
    let mut acc = vec![0.0f32; q];
    for i in 0..m {
        let row = &mut out[i * q..(i + 1) * q];
        for (blk, achunk) in a[i * n..(i + 1) * n].chunks(chunk).enumerate() {
            acc.iter_mut().for_each(|v| *v = 0.0);
            for (t, &av) in achunk.iter().enumerate() {
                let kk = blk * chunk + t;
                for (o, &bv) in acc.iter_mut().zip(&b[kk * q..(kk + 1) * q]) {
                    *o += av * bv;
                }
            }
            for (o, &v) in row.iter_mut().zip(&acc) {
                *o += f64::from(v);
            }
        }
    }
    Ok(out)
}

fn depthwise_f64(cols: &[f64], w: &[f64], g: &ConvGeom, params: &FieldParams) -> Vec<f64> {
    let (c, taps) = (g.c, g.k * g.k);
    let window = params.safe_window(max_abs(cols), max_abs(w)).max(1);
    let mut out = vec![0.0f64; g.patches() * c];
    for (p, orow) in out.chunks_mut(c).enumerate() {
        let prow = &cols[p * taps * c..(p + 1) * taps * c];
        for t in 0..taps {
            for ch in 0..c {
                orow[ch] += prow[t * c + ch] * w[t * c + ch];
            }
            if (t + 1) % window == 0 {
                orow.iter_mut().for_each(|v| *v = params.reduce(*v));
            }
        }
        orow.iter_mut().for_each(|v| *v = params.reduce(*v));
    }
    out
}

fn depthwise_f32(cols: &[f32], w: &[f32], g: &ConvGeom) -> Result<Vec<f64>, KernelError> {
    let (c, taps) = (g.c, g.k * g.k);
    let mx = cols
        .iter()
        .fold(0.0f64, |acc, v| acc.max(f64::from(v.abs())));
    let mw = w.iter().fold(0.0f64, |acc, v| acc.max(f64::from(v.abs())));
    let per = mx * mw;
    if per > F32_EXACT {
        return Err(KernelError::F32Precision(per));
    }
    let chunk = if per == 0.0 {
        taps
    } else {
        ((F32_EXACT / per) as usize).clamp(1, taps)
    };
    let mut out = vec![0.0f64; g.patches() * c];
    let mut acc = vec![0.0f32; c];
    for (p, orow) in out.chunks_mut(c).enumerate() {
        let prow = &cols[p * taps * c..(p + 1) * taps * c];
        for start in (0..taps).step_by(chunk) {
            acc.iter_mut().for_each(|v| *v = 0.0);
            for t in start..(start + chunk).min(taps) {
                for ch in 0..c {
                    acc[ch] += prow[t * c + ch] * w[t * c + ch];
                }
            }
            for (o, &v) in orow.iter_mut().zip(&acc) {
                *o += f64::from(v);
            }
        }
    }
    Ok(out)
}

/// The untrusted executor's evaluation of `x W` (bias-free), returned as
/// centered residues.
pub fn untrusted_forward(
    op: &LinearOp,
    x: &[f64],
    weights: &UntrustedWeights,
    mode: UntrustedMode,
    params: &FieldParams,
    ops: &mut LayerOps,
) -> Result<Vec<f64>, KernelError> {
    expect_len("input", x.len(), op.input_len())?;
    expect_len("weight", weights.w64.len(), op.weight_len())?;
    let geom = ConvGeom::of(op).transpose()?;
    // (rows, inner, cols) of the matrix product, or None for depthwise.
    let dims = match *op {
        LinearOp::Fc { h_in, h_out } => Some((1, h_in, h_out)),
        LinearOp::Pointwise { h, w, c_in, c_out } => Some((h * w, c_in, c_out)),
        LinearOp::Conv2d { c_out, .. } => geom.map(|g| (g.patches(), g.patch_len(), c_out)),
        LinearOp::Depthwise { .. } => None,
    };
    let count = match (dims, geom) {
        (Some((m, n, q)), _) => m * n * q,
        (None, Some(g)) => g.patches() * g.patch_len(),
        (None, None) => unreachable!("depthwise always has a geometry"),
    };
    let out = match mode {
        UntrustedMode::BlindedF64 => {
            let patches;
            let lhs = match (op, geom) {
                (LinearOp::Conv2d { .. } | LinearOp::Depthwise { .. }, Some(g)) => {
                    patches = im2col(x, &g);
                    &patches[..]
                }
                _ => x,
            };
            match dims {
                Some((m, n, q)) => matmul_f64_deferred(lhs, &weights.w64, m, n, q, params),
                None => depthwise_f64(
                    lhs,
                    &weights.w64,
                    &geom.expect("depthwise geometry"),
                    params,
                ),
            }
        }
        UntrustedMode::UnblindedF32 => {
            if max_abs(x) > F32_EXACT {
                return Err(KernelError::F32Precision(max_abs(x)));
            }
            let x32: Vec<f32> = x.iter().map(|&v| v as f32).collect();
            let lhs = match geom {
                Some(g) => im2col(&x32, &g),
                None => x32,
            };
            let raw = match dims {
                Some((m, n, q)) => matmul_f32_exact(&lhs, &weights.w32, m, n, q)?,
                None => depthwise_f32(&lhs, &weights.w32, &geom.expect("depthwise geometry"))?,
            };
            raw.into_iter().map(|v| params.reduce(v)).collect()
        }
    };
    ops.mul_add(count);
    Ok(out)
}
