use crate::field::FieldParams;
use crate::model::LinearOp;

use super::{center, col2im, expect_len, im2col, max_abs_i64, ConvGeom, KernelError, LayerOps};

const I64_ROOM: i128 = 1 << 62;

/// `(m x n) * (n x q)` over `Z_p` in native integers.
pub fn matmul_i64(
    a: &[i64],
    b: &[i64],
    m: usize,
    n: usize,
    q: usize,
    params: &FieldParams,
    ops: &mut LayerOps,
) -> Vec<i64> {
    matmul_core(a, b, m, n, q, Some(params), ops).expect("reduced products cannot overflow")
}

fn matmul_core(
    a: &[i64],
    b: &[i64],
    m: usize,
    n: usize,
    q: usize,
    params: Option<&FieldParams>,
    ops: &mut LayerOps,
) -> Result<Vec<i64>, KernelError> {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), n * q);
    let per = i128::from(max_abs_i64(a)) * i128::from(max_abs_i64(b));
    let modulus = params.map(|p| i64::from(p.modulus()));
    let chunk = match modulus {
        None if per * n as i128 >= I64_ROOM => return Err(KernelError::WideOverflow),
        None => n.max(1),
        Some(md) => ((I64_ROOM - i128::from(md)) / per.max(1)).clamp(1, n.max(1) as i128) as usize,
    };
    let mut out = vec![0i64; m * q];
    for i in 0..m {
        let row = &mut out[i * q..(i + 1) * q];
        let arow = &a[i * n..(i + 1) * n];
        for (blk, achunk) in arow.chunks(chunk).enumerate() {
            for (t, &av) in achunk.iter().enumerate() {
                let kk = blk * chunk + t;
                let brow = &b[kk * q..(kk + 1) * q];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
            if let Some(md) = modulus {
                row.iter_mut().for_each(|v| *v = center(*v, md));
            }
        }
    }
    ops.mul_add(m * n * q);
    Ok(out)
}

/// `sum a_i b_i` over `Z_p`.
pub fn dot_i64(a: &[i64], b: &[i64], params: &FieldParams, ops: &mut LayerOps) -> i64 {
    debug_assert_eq!(a.len(), b.len());
    let md = i64::from(params.modulus());
    let per = i128::from(max_abs_i64(a)) * i128::from(max_abs_i64(b));
    let chunk =
        ((I64_ROOM - i128::from(md)) / per.max(1)).clamp(1, a.len().max(1) as i128) as usize;
    let mut acc = 0i64;
    for (ca, cb) in a.chunks(chunk).zip(b.chunks(chunk)) {
        acc += ca.iter().zip(cb).map(|(x, y)| x * y).sum::<i64>();
        acc = center(acc, md);
    }
    ops.mul_add(a.len());
    acc
}

fn depthwise_core(cols: &[i64], w: &[i64], g: &ConvGeom, ops: &mut LayerOps) -> Vec<i64> {
    let c = g.c;
    let taps = g.k * g.k;
    let mut out = vec![0i64; g.patches() * c];
    for (p, orow) in out.chunks_mut(c).enumerate() {
        let prow = &cols[p * taps * c..(p + 1) * taps * c];
        for t in 0..taps {
            for ch in 0..c {
                orow[ch] += prow[t * c + ch] * w[t * c + ch];
            }
        }
    }
    ops.mul_add(g.patches() * taps * c);
    out
}

fn forward(
    op: &LinearOp,
    x: &[i64],
    w: &[i64],
    bias: Option<&[i64]>,
    params: Option<&FieldParams>,
    ops: &mut LayerOps,
) -> Result<Vec<i64>, KernelError> {
    expect_len("input", x.len(), op.input_len())?;
    expect_len("weight", w.len(), op.weight_len())?;
    if let Some(b) = bias {
        expect_len("bias", b.len(), op.bias_len())?;
    }
    let mut y = match *op {
        LinearOp::Fc { h_in, h_out } => matmul_core(x, w, 1, h_in, h_out, params, ops)?,
        LinearOp::Pointwise {
            h,
            w: wd,
            c_in,
            c_out,
        } => matmul_core(x, w, h * wd, c_in, c_out, params, ops)?,
        LinearOp::Conv2d { c_out, .. } => {
            let g = ConvGeom::of(op).expect("conv geometry")?;
            let cols = im2col(x, &g);
            matmul_core(&cols, w, g.patches(), g.patch_len(), c_out, params, ops)?
        }
        LinearOp::Depthwise { .. } => {
            let g = ConvGeom::of(op).expect("depthwise geometry")?;
            let taps = (g.k * g.k) as i128;
            let per = i128::from(max_abs_i64(x)) * i128::from(max_abs_i64(w));
            if per * taps >= I64_ROOM {
                return Err(KernelError::WideOverflow);
            }
            let mut y = depthwise_core(&im2col(x, &g), w, &g, ops);
            if let Some(p) = params {
                let md = i64::from(p.modulus());
                y.iter_mut().for_each(|v| *v = center(*v, md));
            }
            y
        }
    };
    if let Some(b) = bias {
        let c = b.len();
        for (i, v) in y.iter_mut().enumerate() {
            *v += b[i % c];
            if let Some(p) = params {
                *v = center(*v, i64::from(p.modulus()));
            }
        }
        ops.additions += y.len() as u64;
    }
    Ok(y)
}

/// Exact field evaluation of `x W` (plus `b` when given), returning centered
/// residues. Counts `cost_f` multiplications.
pub fn linear_forward(
    op: &LinearOp,
    x: &[i64],
    w: &[i64],
    bias: Option<&[i64]>,
    params: &FieldParams,
    ops: &mut LayerOps,
) -> Result<Vec<i64>, KernelError> {
    forward(op, x, w, bias, Some(params), ops)
}

/// Integer evaluation without any modular reduction, for range
/// certification. Fails when the accumulation could leave `i64`.
pub fn linear_forward_wide(
    op: &LinearOp,
    x: &[i64],
    w: &[i64],
    bias: Option<&[i64]>,
) -> Result<Vec<i64>, KernelError> {
    forward(op, x, w, bias, None, &mut LayerOps::default())
}

/// The transposed operator: maps `s` (one entry per output) to `W s` (one
/// entry per input), so that `<f(x), s> = <x, W s>`.
pub fn linear_transpose(
    op: &LinearOp,
    s: &[i64],
    w: &[i64],
    params: &FieldParams,
    ops: &mut LayerOps,
) -> Result<Vec<i64>, KernelError> {
    expect_len("check vector", s.len(), op.output_len())?;
    expect_len("weight", w.len(), op.weight_len())?;
    let md = i64::from(params.modulus());
    let transpose = |rows: usize, cols: usize| {
        let mut t = vec![0i64; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = w[r * cols + c];
            }
        }
        t
    };
    Ok(match *op {
        LinearOp::Fc { h_in, h_out } => matmul_i64(w, s, h_in, h_out, 1, params, ops),
        LinearOp::Pointwise {
            h,
            w: wd,
            c_in,
            c_out,
        } => matmul_i64(s, &transpose(c_in, c_out), h * wd, c_out, c_in, params, ops),
        LinearOp::Conv2d { c_out, .. } => {
            let g = ConvGeom::of(op).expect("conv geometry")?;
            let cols = matmul_i64(
                s,
                &transpose(g.patch_len(), c_out),
                g.patches(),
                c_out,
                g.patch_len(),
                params,
                ops,
            );
            col2im(&cols, &g)
                .into_iter()
                .map(|v| center(v, md))
                .collect()
        }
        LinearOp::Depthwise { .. } => {
            let g = ConvGeom::of(op).expect("depthwise geometry")?;
            let taps = g.k * g.k;
            let mut cols = vec![0i64; g.patches() * taps * g.c];
            for p in 0..g.patches() {
                for t in 0..taps {
                    for ch in 0..g.c {
                        cols[(p * taps + t) * g.c + ch] = s[p * g.c + ch] * w[t * g.c + ch];
                    }
                }
            }
            ops.mul_add(cols.len());
            // Each input cell collects at most k^2 products below 2^46.
            col2im(&cols, &g)
                .into_iter()
                .map(|v| center(v, md))
                .collect()
        }
    })
}
