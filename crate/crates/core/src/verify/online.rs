use crate::field::FieldParams;
use crate::kernels::{center, expect_len, im2col, linear_forward, matmul_i64, ConvGeom, LayerOps};
use crate::model::LinearOp;
use crate::quantize::QLinear;

use super::{CheckOutcome, CheckSource, SoundnessConfig, Verdict, VerifyError};

fn validate(op: &LinearOp, xs: &[&[i64]], ys: &[&[i64]]) -> Result<(), VerifyError> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(VerifyError::BatchMismatch {
            xs: xs.len(),
            ys: ys.len(),
        });
    }
    for (x, y) in xs.iter().zip(ys) {
        expect_len("input", x.len(), op.input_len())?;
        expect_len("output", y.len(), op.output_len())?;
    }
    Ok(())
}

/// `sum_b s_b v_b` over `Z_p`.
fn combine(vs: &[&[i64]], s: &[i64], params: &FieldParams, ops: &mut LayerOps) -> Vec<i64> {
    let md = i64::from(params.modulus());
    let mut out = vec![0i64; vs[0].len()];
    for (v, &sb) in vs.iter().zip(s) {
        for (o, &e) in out.iter_mut().zip(v.iter()) {
            *o = center(*o + sb * e, md);
        }
    }
    ops.mul_add(vs.len() * out.len());
    out
}

fn repeat(
    cfg: &SoundnessConfig,
    mut one: impl FnMut(&mut LayerOps) -> Result<bool, VerifyError>,
) -> Result<CheckOutcome, VerifyError> {
    let mut ops = LayerOps::default();
    for repetition in 0..cfg.repetitions() {
        if !one(&mut ops)? {
            return Ok(CheckOutcome {
                verdict: Verdict::Reject { repetition },
                ops,
            });
        }
    }
    Ok(CheckOutcome {
        verdict: Verdict::Accept,
        ops,
    })
}

/// One repetition of `f(s^T X) = s^T Y` with an explicit `s` of batch length.
pub fn check_left_with(
    op: &LinearOp,
    xs: &[&[i64]],
    ys: &[&[i64]],
    w: &[i64],
    s: &[i64],
    params: &FieldParams,
    ops: &mut LayerOps,
) -> Result<bool, VerifyError> {
    validate(op, xs, ys)?;
    let xc = combine(xs, s, params, ops);
    let yc = combine(ys, s, params, ops);
    Ok(linear_forward(op, &xc, w, None, params, ops)? == yc)
}

/// Batched check for any operator; the form used for FC and depthwise.
pub fn check_batched_left(
    op: &LinearOp,
    xs: &[&[i64]],
    ys: &[&[i64]],
    w: &[i64],
    cfg: &SoundnessConfig,
    src: &mut CheckSource,
) -> Result<CheckOutcome, VerifyError> {
    validate(op, xs, ys)?;
    repeat(cfg, |ops| {
        let s = src.draw(xs.len());
        check_left_with(op, xs, ys, w, &s, cfg.field(), ops)
    })
}

/// Checks `X W = Y` for row-major `X: b x m`, `W: m x n`, `Y: b x n`.
#[allow(clippy::too_many_arguments)]
pub fn check_plain_matmul(
    x: &[i64],
    w: &[i64],
    y: &[i64],
    b: usize,
    m: usize,
    n: usize,
    cfg: &SoundnessConfig,
    src: &mut CheckSource,
) -> Result<CheckOutcome, VerifyError> {
    expect_len("x", x.len(), b * m)?;
    expect_len("y", y.len(), b * n)?;
    let xs: Vec<&[i64]> = x.chunks(m.max(1)).collect();
    let ys: Vec<&[i64]> = y.chunks(n.max(1)).collect();
    check_batched_left(&LinearOp::Fc { h_in: m, h_out: n }, &xs, &ys, w, cfg, src)
}

/// One repetition of `X (W s) = Y s` for a pointwise conv, `s` over
/// output channels.
pub fn check_pointwise_right_with(
    op: &LinearOp,
    xs: &[&[i64]],
    ys: &[&[i64]],
    w: &[i64],
    s: &[i64],
    params: &FieldParams,
    ops: &mut LayerOps,
) -> Result<bool, VerifyError> {
    validate(op, xs, ys)?;
    let LinearOp::Pointwise {
        h,
        w: wd,
        c_in,
        c_out,
    } = *op
    else {
        unreachable!("right-side check on a non-pointwise op")
    };
    let ws = matmul_i64(w, s, c_in, c_out, 1, params, ops);
    for (x, y) in xs.iter().zip(ys) {
        let lhs = matmul_i64(x, &ws, h * wd, c_in, 1, params, ops);
        let rhs = matmul_i64(y, s, h * wd, c_out, 1, params, ops);
        if lhs != rhs {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn check_pointwise_right(
    op: &LinearOp,
    xs: &[&[i64]],
    ys: &[&[i64]],
    w: &[i64],
    cfg: &SoundnessConfig,
    src: &mut CheckSource,
) -> Result<CheckOutcome, VerifyError> {
    validate(op, xs, ys)?;
    let c_out = op.bias_len();
    repeat(cfg, |ops| {
        let s = src.draw(c_out);
        check_pointwise_right_with(op, xs, ys, w, &s, cfg.field(), ops)
    })
}

/// One repetition of `Conv(x, W s) = y s` for a single example.
pub fn check_conv_folded_with(
    op: &LinearOp,
    x: &[i64],
    y: &[i64],
    w: &[i64],
    s: &[i64],
    params: &FieldParams,
    ops: &mut LayerOps,
) -> Result<bool, VerifyError> {
    validate(op, &[x], &[y])?;
    let LinearOp::Conv2d { c_out, .. } = *op else {
        unreachable!("folded check on a non-conv op")
    };
    let g = ConvGeom::of(op).expect("conv geometry")?;
    let ws = matmul_i64(w, s, g.patch_len(), c_out, 1, params, ops);
    let lhs = matmul_i64(
        &im2col(x, &g),
        &ws,
        g.patches(),
        g.patch_len(),
        1,
        params,
        ops,
    );
    let rhs = matmul_i64(y, s, g.patches(), c_out, 1, params, ops);
    Ok(lhs == rhs)
}

/// Kernel-folding conv check. A batch is first reduced by a random batch
/// vector, then folded.
pub fn check_conv_folded(
    op: &LinearOp,
    xs: &[&[i64]],
    ys: &[&[i64]],
    w: &[i64],
    cfg: &SoundnessConfig,
    src: &mut CheckSource,
) -> Result<CheckOutcome, VerifyError> {
    validate(op, xs, ys)?;
    let c_out = op.bias_len();
    repeat(cfg, |ops| {
        if xs.len() == 1 {
            let s = src.draw(c_out);
            return check_conv_folded_with(op, xs[0], ys[0], w, &s, cfg.field(), ops);
        }
        let t = src.draw(xs.len());
        let s = src.draw(c_out);
        let xc = combine(xs, &t, cfg.field(), ops);
        let yc = combine(ys, &t, cfg.field(), ops);
        check_conv_folded_with(op, &xc, &yc, w, &s, cfg.field(), ops)
    })
}

/// The online check appropriate to the layer's operator.
pub fn check_online(
    layer: &QLinear,
    xs: &[&[i64]],
    ys: &[&[i64]],
    cfg: &SoundnessConfig,
    src: &mut CheckSource,
) -> Result<CheckOutcome, VerifyError> {
    match layer.op {
        LinearOp::Fc { .. } | LinearOp::Depthwise { .. } => {
            check_batched_left(&layer.op, xs, ys, &layer.weight, cfg, src)
        }
        LinearOp::Pointwise { .. } => {
            check_pointwise_right(&layer.op, xs, ys, &layer.weight, cfg, src)
        }
        LinearOp::Conv2d { .. } => check_conv_folded(&layer.op, xs, ys, &layer.weight, cfg, src),
    }
}
