use crate::model::{ActivationKind, PoolKind};

/// `v / 2^bits` rounded half away from zero.
#[inline]
pub fn round_shift(v: i64, bits: u32) -> i64 {
    if bits == 0 {
        return v;
    }
    let half = 1i64 << (bits - 1);
    let mag = (v.unsigned_abs() + half as u64) >> bits;
    if v < 0 {
        -(mag as i64)
    } else {
        mag as i64
    }
}

/// Rescales centered values from scale `2l` to scale `l`.
pub fn requantize(y: &[i64], frac_bits: u32) -> Vec<i64> {
    y.iter().map(|&v| round_shift(v, frac_bits)).collect()
}

/// Raises values at scale `l` to scale `2l`, reduced into the field.
pub fn lift_to_double_scale(x: &[i64], frac_bits: u32, modulus: u32) -> Vec<i64> {
    let m = i64::from(modulus);
    x.iter()
        .map(|&v| super::center(v << frac_bits, m))
        .collect()
}

/// Applies the non-linearity to values already at scale `l`.
pub fn apply_nonlinearity(x: &mut [i64], kind: ActivationKind, frac_bits: u32) {
    match kind {
        ActivationKind::Relu => x.iter_mut().for_each(|v| *v = (*v).max(0)),
        ActivationKind::Relu6 => {
            let six = 6i64 << frac_bits;
            x.iter_mut().for_each(|v| *v = (*v).clamp(0, six));
        }
        ActivationKind::None => {}
    }
}

/// `sigma(y)`: requantize a scale-`2l` pre-activation, then apply `kind`.
pub fn activation(y: &[i64], kind: ActivationKind, frac_bits: u32) -> Vec<i64> {
    let mut x = requantize(y, frac_bits);
    apply_nonlinearity(&mut x, kind, frac_bits);
    x
}

/// 2x2, stride-2 pooling of an `(h, w, c)` tensor. Averages round half away
/// from zero.
pub fn pool(x: &[i64], shape: &[usize], kind: PoolKind) -> Vec<i64> {
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    debug_assert_eq!(x.len(), h * w * c);
    let mut out = Vec::with_capacity(h / 2 * (w / 2) * c);
    for i in 0..h / 2 {
        for j in 0..w / 2 {
            for ch in 0..c {
                let at = |di: usize, dj: usize| x[((2 * i + di) * w + 2 * j + dj) * c + ch];
                let vals = [at(0, 0), at(0, 1), at(1, 0), at(1, 1)];
                out.push(match kind {
                    PoolKind::Max => *vals.iter().max().expect("four values"),
                    PoolKind::Avg => round_shift(vals.iter().sum(), 2),
                });
            }
        }
    }
    out
}
