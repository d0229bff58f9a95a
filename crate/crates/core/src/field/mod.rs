//! Arithmetic over `Z_p` carried out on `f64` with deferred modular reduction.
//!
//! Residues are held in centered form, `[-(p-1)/2, (p-1)/2]`, as exact
//! integers inside doubles. A product of a field element and a check-vector
//! entry is bounded by `(p-1)/2 * rho`, so an inner product can accumulate
//! `reduction_window` such terms before the running sum has to be reduced to
//! stay below `2^53`.

mod prf;

pub use prf::{PrfKey, PrfStream, SampleRange};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `2^24 - 3`, the largest prime below `2^24`.
pub const DEFAULT_MODULUS: u32 = (1 << 24) - 3;
/// Check vectors are drawn from `[-2^19, 2^19]` by default.
pub const DEFAULT_CHECK_RANGE: u32 = 1 << 19;
pub const DEFAULT_REDUCTION_WINDOW: usize = 1 << 10;

/// `2^53`: every integer of smaller magnitude is exactly representable.
pub const EXACT_LIMIT: f64 = 9_007_199_254_740_992.0;
const HALF_EXACT_LIMIT: f64 = 4_503_599_627_370_496.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("modulus {0} is not prime")]
    NotPrime(u32),
    #[error("modulus {0} is not below 2^24")]
    ModulusTooLarge(u32),
    #[error("check range bound must be at least 1")]
    EmptyCheckRange,
    #[error("check range [-{rho}, {rho}] has more than p = {modulus} values")]
    CheckRangeTooWide { rho: u32, modulus: u32 },
    #[error("reduction window must be at least 1")]
    EmptyWindow,
    #[error("p * rho * window = 2^{bits:.3} exceeds the 2^53 exact-double limit")]
    WindowTooLarge { bits: f64 },
    #[error("value {0} is not an integer below 2^53 in magnitude")]
    PrecisionLoss(f64),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("element {index} = {value} lies outside [-{bound}, {bound}]")]
    RangeViolation {
        index: usize,
        value: f64,
        bound: f64,
    },
    #[error("shape {shape:?} does not describe {len} elements")]
    ShapeMismatch { shape: Vec<usize>, len: usize },
    #[error("entropy source unavailable: {0}")]
    Entropy(String),
}

/// Modulus, check range and reduction window, validated together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawFieldParams", into = "RawFieldParams")]
pub struct FieldParams {
    modulus: u32,
    check_range: u32,
    reduction_window: usize,
}

#[derive(Serialize, Deserialize)]
struct RawFieldParams {
    modulus: u32,
    check_range: u32,
    reduction_window: usize,
}

impl TryFrom<RawFieldParams> for FieldParams {
    type Error = FieldError;

    fn try_from(raw: RawFieldParams) -> Result<Self, FieldError> {
        FieldParams::new(raw.modulus, raw.check_range, raw.reduction_window)
    }
}

impl From<FieldParams> for RawFieldParams {
    fn from(p: FieldParams) -> Self {
        RawFieldParams {
            modulus: p.modulus,
            check_range: p.check_range,
            reduction_window: p.reduction_window,
        }
    }
}

impl Default for FieldParams {
    fn default() -> Self {
        FieldParams {
            modulus: DEFAULT_MODULUS,
            check_range: DEFAULT_CHECK_RANGE,
            reduction_window: DEFAULT_REDUCTION_WINDOW,
        }
    }
}

fn is_prime(n: u32) -> bool {
    if n < 2 {
        return false;
    }
    if n.is_multiple_of(2) {
        return n == 2;
    }
    let mut d = 3u32;
    while d.saturating_mul(d) <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 2;
    }
    true
}

impl FieldParams {
    pub fn new(
        modulus: u32,
        check_range: u32,
        reduction_window: usize,
    ) -> Result<Self, FieldError> {
        if modulus >= 1 << 24 {
            return Err(FieldError::ModulusTooLarge(modulus));
        }
        if !is_prime(modulus) {
            return Err(FieldError::NotPrime(modulus));
        }
        if check_range == 0 {
            return Err(FieldError::EmptyCheckRange);
        }
        if 2 * u64::from(check_range) + 1 > u64::from(modulus) {
            return Err(FieldError::CheckRangeTooWide {
                rho: check_range,
                modulus,
            });
        }
        if reduction_window == 0 {
            return Err(FieldError::EmptyWindow);
        }
        let bits = (f64::from(modulus) * f64::from(check_range) * reduction_window as f64).log2();
        if bits > 53.0 {
            return Err(FieldError::WindowTooLarge { bits });
        }
        Ok(FieldParams {
            modulus,
            check_range,
            reduction_window,
        })
    }

    /// Same modulus and window, different check range.
    pub fn with_check_range(&self, check_range: u32) -> Result<Self, FieldError> {
        FieldParams::new(self.modulus, check_range, self.reduction_window)
    }

    pub fn modulus(&self) -> u32 {
        self.modulus
    }

    pub fn check_range(&self) -> u32 {
        self.check_range
    }

    pub fn reduction_window(&self) -> usize {
        self.reduction_window
    }

    #[inline]
    pub fn p(&self) -> f64 {
        f64::from(self.modulus)
    }

    /// `(p-1)/2`, the largest centered residue.
    #[inline]
    pub fn half(&self) -> f64 {
        f64::from((self.modulus - 1) / 2)
    }

    /// Number of elements of the check set `S = [-rho, rho]`.
    pub fn check_set_size(&self) -> u64 {
        2 * u64::from(self.check_range) + 1
    }

    /// Largest number of products of magnitude at most `bound_a * bound_b`
    /// that can be added to a reduced accumulator without leaving the
    /// exact-double range, capped at the configured window.
    pub fn safe_window(&self, bound_a: f64, bound_b: f64) -> usize {
        let per_term = bound_a * bound_b;
        if per_term <= 0.0 {
            return self.reduction_window;
        }
        let room = ((EXACT_LIMIT - 1.0 - self.half()) / per_term).floor();
        if room < 1.0 {
            // A single product can already exceed 2^53; callers never pass
            // such bounds for residues below 2^24.
            return 1;
        }
        (room as usize).min(self.reduction_window)
    }

    /// Reduces an exact integer held in a double to its centered residue.
    /// The caller guarantees `|v| < 2^53`.
    #[inline]
    pub fn reduce(&self, v: f64) -> f64 {
        debug_assert!(
            v.abs() < EXACT_LIMIT,
            "accumulator {v} left the exact range"
        );
        let p = self.p();
        let half = self.half();
        let mut r = if v.abs() < HALF_EXACT_LIMIT {
            // q * p stays below 2^53, so both the product and the
            // difference are exact.
            let q = (v / p).round();
            v - q * p
        } else {
            let m = i64::from(self.modulus);
            (v as i64).rem_euclid(m) as f64
        };
        if r > half {
            r -= p;
        } else if r < -half {
            r += p;
        }
        r
    }

    #[inline]
    pub fn reduce_i64(&self, v: i64) -> f64 {
        let m = i64::from(self.modulus);
        let r = v.rem_euclid(m);
        if r > (m - 1) / 2 {
            (r - m) as f64
        } else {
            r as f64
        }
    }

    #[inline]
    pub fn add(&self, a: f64, b: f64) -> f64 {
        let s = a + b;
        if s > self.half() {
            s - self.p()
        } else if s < -self.half() {
            s + self.p()
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(&self, a: f64, b: f64) -> f64 {
        self.add(a, -b)
    }

    #[inline]
    pub fn mul(&self, a: f64, b: f64) -> f64 {
        self.reduce(a * b)
    }

    pub fn contains(&self, v: f64) -> bool {
        v.fract() == 0.0 && v.abs() <= self.half()
    }
}

/// Checked reduction of an arbitrary double-held integer.
pub fn mod_reduce(v: f64, params: &FieldParams) -> Result<f64, FieldError> {
    if !v.is_finite() || v.fract() != 0.0 || v.abs() >= EXACT_LIMIT {
        return Err(FieldError::PrecisionLoss(v));
    }
    Ok(params.reduce(v))
}

/// Which set an inner-product operand is promised to lie in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperandRange {
    /// Any centered residue.
    Field,
    /// The check set `[-rho, rho]`.
    CheckRange,
}

impl OperandRange {
    pub fn bound(self, params: &FieldParams) -> f64 {
        match self {
            OperandRange::Field => params.half(),
            OperandRange::CheckRange => f64::from(params.check_range),
        }
    }
}

/// Inner product over `Z_p` with a reduction every `window` terms.
#[inline]
pub(crate) fn dot_window(a: &[f64], b: &[f64], window: usize, params: &FieldParams) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (ca, cb) in a.chunks(window).zip(b.chunks(window)) {
        // Four lanes so the loop vectorizes; each lane sees at most
        // `window` products anyway.
        let mut lanes = [0.0f64; 4];
        let mut ia = ca.chunks_exact(4);
        let mut ib = cb.chunks_exact(4);
        for (xa, xb) in (&mut ia).zip(&mut ib) {
            lanes[0] += xa[0] * xb[0];
            lanes[1] += xa[1] * xb[1];
            lanes[2] += xa[2] * xb[2];
            lanes[3] += xa[3] * xb[3];
        }
        let mut tail = 0.0;
        for (x, y) in ia.remainder().iter().zip(ib.remainder()) {
            tail += x * y;
        }
        // Lane sums of a chunk never exceed the window bound, and at most
        // one reduced value is carried in.
        let chunk = params.reduce(lanes[0] + lanes[1]) + params.reduce(lanes[2] + lanes[3]);
        acc = params.reduce(acc + chunk + tail);
    }
    acc
}

/// Exact `Z_p` inner product of `a` (any residues) with `b` (residues or
/// check-vector entries, per `b_range`).
pub fn inner_product_deferred(
    a: &FieldTensor,
    b: &FieldTensor,
    b_range: OperandRange,
    params: &FieldParams,
) -> Result<f64, FieldError> {
    if a.len() != b.len() {
        return Err(FieldError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    check_range(a.as_slice(), params.half())?;
    let b_bound = b_range.bound(params);
    check_range(b.as_slice(), b_bound)?;
    let window = params.safe_window(params.half(), b_bound);
    Ok(dot_window(a.as_slice(), b.as_slice(), window, params))
}

fn check_range(values: &[f64], bound: f64) -> Result<(), FieldError> {
    match values
        .iter()
        .position(|v| v.fract() != 0.0 || v.abs() > bound)
    {
        Some(index) => Err(FieldError::RangeViolation {
            index,
            value: values[index],
            bound,
        }),
        None => Ok(()),
    }
}

/// Largest absolute value in a slice; zero for an empty slice.
pub(crate) fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// A dense tensor of centered residues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl FieldTensor {
    /// Wraps data already in centered form.
    pub fn new(
        shape: Vec<usize>,
        data: Vec<f64>,
        params: &FieldParams,
    ) -> Result<Self, FieldError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(FieldError::ShapeMismatch {
                shape,
                len: data.len(),
            });
        }
        check_range(&data, params.half())?;
        Ok(FieldTensor { shape, data })
    }

    /// Embeds arbitrary integers by reduction.
    pub fn from_integers(
        shape: Vec<usize>,
        values: &[i64],
        params: &FieldParams,
    ) -> Result<Self, FieldError> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(FieldError::ShapeMismatch {
                shape,
                len: values.len(),
            });
        }
        let data = values.iter().map(|&v| params.reduce_i64(v)).collect();
        Ok(FieldTensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        FieldTensor {
            shape,
            data: vec![0.0; len],
        }
    }

    /// Crate-internal constructor for kernel outputs that are reduced by
    /// construction.
    pub(crate) fn from_reduced(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        FieldTensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, FieldError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(FieldError::ShapeMismatch {
                shape,
                len: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn to_i64(&self) -> Vec<i64> {
        self.data.iter().map(|&v| v as i64).collect()
    }

    pub fn add(
        &self,
        other: &FieldTensor,
        params: &FieldParams,
    ) -> Result<FieldTensor, FieldError> {
        self.zip_with(other, |a, b| params.add(a, b))
    }

    pub fn sub(
        &self,
        other: &FieldTensor,
        params: &FieldParams,
    ) -> Result<FieldTensor, FieldError> {
        self.zip_with(other, |a, b| params.sub(a, b))
    }

    fn zip_with(
        &self,
        other: &FieldTensor,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<FieldTensor, FieldError> {
        if self.len() != other.len() {
            return Err(FieldError::LengthMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(FieldTensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Little-endian two's-complement `i32` encoding, four bytes per element.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            out.extend_from_slice(&(v as i32).to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(
        shape: Vec<usize>,
        bytes: &[u8],
        params: &FieldParams,
    ) -> Result<Self, FieldError> {
        if !bytes.len().is_multiple_of(4) {
            return Err(FieldError::ShapeMismatch {
                shape,
                len: bytes.len() / 4,
            });
        }
        let data: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f64::from(i32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        FieldTensor::new(shape, data, params)
    }
}
