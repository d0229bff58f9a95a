//! Unquantized `f64` forward pass with direct loops.

use super::{window, ActivationKind, LayerSpec, LinearLayer, LinearOp, ModelGraph, PoolKind};

/// Runs `model` on a flattened input in `f64`, without any rounding.
pub fn forward_f64(model: &ModelGraph, input: &[f64]) -> Vec<f64> {
    run(&model.layers, input.to_vec(), &model.input_shape).0
}

fn run(layers: &[LayerSpec], mut x: Vec<f64>, shape: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let mut shape = shape.to_vec();
    for layer in layers {
        match layer {
            LayerSpec::Linear(lin) => {
                x = linear(lin, &x);
                shape = lin.op.output_shape();
            }
            LayerSpec::Activation(kind) => activate(&mut x, *kind),
            LayerSpec::Pool(kind) => {
                x = pool(&x, &shape, *kind);
                shape = vec![shape[0] / 2, shape[1] / 2, shape[2]];
            }
            LayerSpec::Residual(block) => {
                let (a, out_shape) = run(&block.main, x.clone(), &shape);
                let (b, _) = run(&block.shortcut, x, &shape);
                x = a.iter().zip(&b).map(|(u, v)| u + v).collect();
                activate(&mut x, block.merge);
                shape = out_shape;
            }
        }
    }
    (x, shape)
}

fn activate(x: &mut [f64], kind: ActivationKind) {
    match kind {
        ActivationKind::Relu => x.iter_mut().for_each(|v| *v = v.max(0.0)),
        ActivationKind::Relu6 => x.iter_mut().for_each(|v| *v = v.clamp(0.0, 6.0)),
        ActivationKind::None => {}
    }
}

fn pool(x: &[f64], shape: &[usize], kind: PoolKind) -> Vec<f64> {
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let mut out = Vec::with_capacity(h * w * c / 4);
    for i in 0..h / 2 {
        for j in 0..w / 2 {
            for ch in 0..c {
                let vals = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .map(|(di, dj)| x[((2 * i + di) * w + 2 * j + dj) * c + ch]);
                out.push(match kind {
                    PoolKind::Max => vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    PoolKind::Avg => vals.iter().sum::<f64>() / 4.0,
                });
            }
        }
    }
    out
}

fn linear(lin: &LinearLayer, x: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = lin.weight.iter().map(|&v| f64::from(v)).collect();
    let b: Vec<f64> = lin.bias.iter().map(|&v| f64::from(v)).collect();
    match lin.op {
        LinearOp::Fc { h_in, h_out } => (0..h_out)
            .map(|j| b[j] + (0..h_in).map(|i| x[i] * w[i * h_out + j]).sum::<f64>())
            .collect(),
        LinearOp::Pointwise {
            h,
            w: wd,
            c_in,
            c_out,
        } => {
            let mut y = Vec::with_capacity(h * wd * c_out);
            for px in 0..h * wd {
                for co in 0..c_out {
                    y.push(
                        b[co]
                            + (0..c_in)
                                .map(|ci| x[px * c_in + ci] * w[ci * c_out + co])
                                .sum::<f64>(),
                    );
                }
            }
            y
        }
        LinearOp::Conv2d {
            h,
            w: wd,
            c_in,
            c_out,
            kernel,
            stride,
            padding,
        }
        | LinearOp::Depthwise {
            h,
            w: wd,
            c_in,
            c_out,
            kernel,
            stride,
            padding,
        } => {
            let depthwise = matches!(lin.op, LinearOp::Depthwise { .. });
            let wh = window(h, kernel, stride, padding).expect("validated geometry");
            let ww = window(wd, kernel, stride, padding).expect("validated geometry");
            let mut y = Vec::with_capacity(wh.out * ww.out * c_out);
            for oi in 0..wh.out {
                for oj in 0..ww.out {
                    for co in 0..c_out {
                        let mut acc = b[co];
                        for ki in 0..kernel {
                            for kj in 0..kernel {
                                let ii = (oi * stride + ki) as isize - wh.pad_before as isize;
                                let jj = (oj * stride + kj) as isize - ww.pad_before as isize;
                                if ii < 0 || jj < 0 || ii >= h as isize || jj >= wd as isize {
                                    continue;
                                }
                                let base = (ii as usize * wd + jj as usize) * c_in;
                                if depthwise {
                                    acc += x[base + co] * w[(ki * kernel + kj) * c_in + co];
                                } else {
                                    for ci in 0..c_in {
                                        acc += x[base + ci]
                                            * w[((ki * kernel + kj) * c_in + ci) * c_out + co];
                                    }
                                }
                            }
                        }
                        y.push(acc);
                    }
                }
            }
            y
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LinearLayer, ModelGraph};

    #[test]
    fn three_by_three_ones_center_is_nine() {
        let mut lin = LinearLayer::zeros(LinearOp::conv(3, 3, 1, 1, 3, 1));
        lin.weight = vec![1.0; 9];
        let m = ModelGraph {
            name: "c".into(),
            input_shape: vec![3, 3, 1],
            layers: vec![LayerSpec::Linear(lin)],
        };
        let y = forward_f64(&m, &[1.0; 9]);
        assert_eq!(y[4], 9.0);
        assert_eq!(y[0], 4.0);
    }

    #[test]
    fn pooling() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(pool(&x, &[2, 2, 1], PoolKind::Max), vec![4.0]);
        assert_eq!(pool(&x, &[2, 2, 1], PoolKind::Avg), vec![2.5]);
    }
}
