use crate::model::{window, LinearOp, Padding};

use super::KernelError;

/// Spatial geometry of a convolution-like operator on an `(h, w, c)` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(
        h: usize,
        w: usize,
        c: usize,
        k: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self, KernelError> {
        let bad = || KernelError::Geometry(format!("{k}x{k} stride {stride} on {h}x{w}"));
        let wh = window(h, k, stride, padding).ok_or_else(bad)?;
        let ww = window(w, k, stride, padding).ok_or_else(bad)?;
        Ok(ConvGeom {
            h,
            w,
            c,
            k,
            stride,
            pad_h: wh.pad_before,
            pad_w: ww.pad_before,
            h_out: wh.out,
            w_out: ww.out,
        })
    }

    /// Geometry of a conv or depthwise op; `None` for FC and pointwise.
    pub fn of(op: &LinearOp) -> Option<Result<Self, KernelError>> {
        match *op {
            LinearOp::Conv2d {
                h,
                w,
                c_in,
                kernel,
                stride,
                padding,
                ..
            }
            | LinearOp::Depthwise {
                h,
                w,
                c_in,
                kernel,
                stride,
                padding,
                ..
            } => Some(ConvGeom::new(h, w, c_in, kernel, stride, padding)),
            _ => None,
        }
    }

    pub fn patches(&self) -> usize {
        self.h_out * self.w_out
    }

    pub fn patch_len(&self) -> usize {
        self.k * self.k * self.c
    }

    /// Input offset for output pixel `(oi, oj)` and tap `(ki, kj)`, or
    /// `None` inside the padding.
    #[inline]
    fn source(&self, oi: usize, oj: usize, ki: usize, kj: usize) -> Option<usize> {
        let ii = (oi * self.stride + ki).checked_sub(self.pad_h)?;
        let jj = (oj * self.stride + kj).checked_sub(self.pad_w)?;
        (ii < self.h && jj < self.w).then(|| (ii * self.w + jj) * self.c)
    }
}

/// Patch matrix of shape `(h_out * w_out, k * k * c)`; columns ordered by
/// `(ky, kx, channel)`, matching the kernel layout. Padding reads as zero.
pub fn im2col<T: Copy + Default>(x: &[T], g: &ConvGeom) -> Vec<T> {
    debug_assert_eq!(x.len(), g.h * g.w * g.c);
    let row = g.patch_len();
    let mut out = vec![T::default(); g.patches() * row];
    for oi in 0..g.h_out {
        for oj in 0..g.w_out {
            let base = (oi * g.w_out + oj) * row;
            for ki in 0..g.k {
                for kj in 0..g.k {
                    if let Some(src) = g.source(oi, oj, ki, kj) {
                        let dst = base + (ki * g.k + kj) * g.c;
                        out[dst..dst + g.c].copy_from_slice(&x[src..src + g.c]);
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatter-adds patch rows back onto the input grid.
/// The result is unreduced.
pub fn col2im(cols: &[i64], g: &ConvGeom) -> Vec<i64> {
    let row = g.patch_len();
    debug_assert_eq!(cols.len(), g.patches() * row);
    let mut out = vec![0i64; g.h * g.w * g.c];
    for oi in 0..g.h_out {
        for oj in 0..g.w_out {
            let base = (oi * g.w_out + oj) * row;
            for ki in 0..g.k {
                for kj in 0..g.k {
                    if let Some(dst) = g.source(oi, oj, ki, kj) {
                        let src = base + (ki * g.k + kj) * g.c;
                        for (o, v) in out[dst..dst + g.c].iter_mut().zip(&cols[src..src + g.c]) {
                            *o += v;
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_is_a_reshape() {
        let g = ConvGeom::new(3, 2, 4, 1, 1, Padding::Same).unwrap();
        let x: Vec<i64> = (0..24).collect();
        assert_eq!(im2col(&x, &g), x);
    }

    #[test]
    fn three_by_three_same_shape() {
        let g = ConvGeom::new(4, 4, 2, 3, 1, Padding::Same).unwrap();
        assert_eq!((g.patches(), g.patch_len()), (16, 18));
        assert_eq!(im2col(&[1i64; 32], &g).len(), 16 * 18);
    }

    #[test]
    fn col2im_is_the_adjoint() {
        // <im2col(x), c> = <x, col2im(c)> for any x, c.
        let g = ConvGeom::new(5, 4, 2, 3, 2, Padding::Same).unwrap();
        let x: Vec<i64> = (0..40).map(|i| (i * 7 % 11) - 5).collect();
        let c: Vec<i64> = (0..g.patches() * g.patch_len())
            .map(|i| (i as i64 * 5 % 13) - 6)
            .collect();
        let lhs: i64 = im2col(&x, &g).iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: i64 = x.iter().zip(col2im(&c, &g)).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }
}
