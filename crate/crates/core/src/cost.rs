//! Closed-form multiplication counts for evaluating and verifying one
//! linear layer at batch size `B`, per Freivalds repetition.
//!
//! | layer     | `cost_f`          | batched verification                         | preprocessed      |
//! |-----------|-------------------|----------------------------------------------|-------------------|
//! | FC        | `\|x\| \|y\|`         | `B(\|x\|+\|y\|) + cost_f`                        | `B(\|x\|+\|y\|)`     |
//! | Conv      | `\|x\| k^2 c_out`    | `B(\|x\|+\|y\|) + c_in c_out + \|x\| k^2`           | `B(\|x\|+\|y\|)`     |
//! | Depthwise | `\|x\| k^2`         | `B(\|x\|+\|y\|) + cost_f`                        | `B(\|x\|+\|y\|)`     |
//! | Pointwise | `\|x\| c_out`       | `B(\|x\|+\|y\|) + c_in c_out`                    | `B(\|x\|+\|y\|)`     |
//!
//! `|x|` and `|y|` are per-example input and output sizes. The conv entry is
//! the published formula; [`conv_folded_check`] gives the count an actual
//! kernel-folding check performs.

use crate::model::LinearOp;

fn io(op: &LinearOp) -> (u64, u64) {
    (op.input_len() as u64, op.output_len() as u64)
}

/// Window operators are counted per output pixel, which equals the table's
/// `|x|` form whenever the layer preserves height and width.
pub fn cost_f(op: &LinearOp) -> u64 {
    let (x, y) = io(op);
    let windows = |c_in: usize| {
        let (ho, wo) = op.out_hw().unwrap_or((0, 0));
        (ho * wo * c_in) as u64
    };
    match *op {
        LinearOp::Fc { .. } => x * y,
        LinearOp::Conv2d {
            kernel,
            c_in,
            c_out,
            ..
        } => windows(c_in) * (kernel * kernel * c_out) as u64,
        LinearOp::Depthwise { kernel, c_in, .. } => windows(c_in) * (kernel * kernel) as u64,
        LinearOp::Pointwise { c_out, .. } => x * c_out as u64,
    }
}

pub fn batched_verification(op: &LinearOp, batch: usize) -> u64 {
    let (x, y) = io(op);
    let b = batch as u64;
    b * (x + y)
        + match *op {
            LinearOp::Fc { .. } | LinearOp::Depthwise { .. } => cost_f(op),
            LinearOp::Conv2d {
                c_in,
                c_out,
                kernel,
                ..
            } => (c_in * c_out) as u64 + x * (kernel * kernel) as u64,
            LinearOp::Pointwise { c_in, c_out, .. } => (c_in * c_out) as u64,
        }
}

pub fn preprocessed_verification(op: &LinearOp, batch: usize) -> u64 {
    let (x, y) = io(op);
    batch as u64 * (x + y)
}

/// Multiplications of one repetition of the kernel-folding conv check:
/// fold `W s` (`k^2 c_in c_out`), one single-channel convolution, and `y s`.
/// With `batch > 1` inputs and outputs are first combined by a batch vector.
pub fn conv_folded_check(op: &LinearOp, batch: usize) -> u64 {
    let (x, y) = io(op);
    match *op {
        LinearOp::Conv2d {
            c_in,
            c_out,
            kernel,
            ..
        } => {
            let (ho, wo) = op.out_hw().unwrap_or((0, 0));
            let fold = (kernel * kernel * c_in * c_out) as u64;
            let conv = (ho * wo * kernel * kernel * c_in) as u64;
            let combine = if batch > 1 { batch as u64 * (x + y) } else { 0 };
            combine + fold + conv + y
        }
        _ => 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fc_examples() {
        let op = LinearOp::Fc {
            h_in: 100,
            h_out: 200,
        };
        assert_eq!(cost_f(&op), 20_000);
        assert_eq!(preprocessed_verification(&op, 1), 300);
        assert_eq!(batched_verification(&op, 4), 4 * 300 + 20_000);
    }

    #[test]
    fn conv_ratio_per_repetition() {
        let op = LinearOp::conv(14, 14, 256, 256, 3, 1);
        let ratio = cost_f(&op) as f64 / preprocessed_verification(&op, 1) as f64;
        assert_eq!(ratio, 1152.0);
    }

    #[test]
    fn strided_windows_count_output_pixels() {
        let op = LinearOp::conv(8, 8, 2, 3, 3, 2);
        assert_eq!(cost_f(&op), 4 * 4 * 2 * 9 * 3);
        let dw = LinearOp::depthwise(8, 8, 2, 3, 2);
        assert_eq!(cost_f(&dw), 4 * 4 * 2 * 9);
    }

    #[test]
    fn folded_count_differs_from_the_published_form() {
        let op = LinearOp::conv(4, 4, 2, 3, 3, 1);
        // fold 9*2*3, conv 16*9*2, y*s 48
        assert_eq!(conv_folded_check(&op, 1), 54 + 288 + 48);
        assert_eq!(batched_verification(&op, 1), 32 + 48 + 6 + 288);
    }
}
