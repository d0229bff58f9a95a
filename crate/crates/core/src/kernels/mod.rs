//! Linear and non-linear layer kernels.
//!
//! Three arithmetic routes evaluate the same linear operators:
//!
//! * [`linear_forward`]: trusted, native `i64` with reduction into centered
//!   residues,
//! * [`untrusted_forward`] in [`UntrustedMode::BlindedF64`]: exact `Z_p`
//!   arithmetic in doubles with deferred reduction,
//! * [`untrusted_forward`] in [`UntrustedMode::UnblindedF32`]: single
//!   precision accumulation whose exactness is checked up front.
//!
//! Convolutions go through [`im2col`] and a matrix product on every route.
//! Linear kernels never add a bias unless asked to; the protocol checks
//! `y = x W` and adds `b` on the trusted side.

mod conv;
mod counter;
mod nonlinear;
mod trusted;
mod untrusted;

pub use conv::{col2im, im2col, ConvGeom};
pub use counter::{LayerOps, OpCounter};
pub use nonlinear::{
    activation, apply_nonlinearity, lift_to_double_scale, pool, requantize, round_shift,
};
pub use trusted::{dot_i64, linear_forward, linear_forward_wide, linear_transpose, matmul_i64};
pub use untrusted::{
    matmul_f32_exact, matmul_f64_deferred, untrusted_forward, UntrustedMode, UntrustedWeights,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("{what}: expected {expected} values, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("f32 path would not be exact: max |x| * max |w| = {0} exceeds 2^24")]
    F32Precision(f64),
    #[error("exact integer accumulation could overflow i64")]
    WideOverflow,
    #[error("invalid geometry: {0}")]
    Geometry(String),
}

pub(crate) fn expect_len(
    what: &'static str,
    got: usize,
    expected: usize,
) -> Result<(), KernelError> {
    if got == expected {
        Ok(())
    } else {
        Err(KernelError::Shape {
            what,
            expected,
            actual: got,
        })
    }
}

/// Centered residue of `v` modulo `m`.
#[inline]
pub(crate) fn center(v: i64, m: i64) -> i64 {
    let r = v.rem_euclid(m);
    if r > (m - 1) / 2 {
        r - m
    } else {
        r
    }
}

pub(crate) fn max_abs_i64(v: &[i64]) -> i64 {
    v.iter().map(|x| x.abs()).max().unwrap_or(0)
}
