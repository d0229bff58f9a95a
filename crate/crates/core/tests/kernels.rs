use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slalom_core::cost::cost_f;
use slalom_core::field::FieldParams;
use slalom_core::kernels::{
    im2col, linear_forward, linear_forward_wide, linear_transpose, untrusted_forward, ConvGeom,
    LayerOps, UntrustedMode, UntrustedWeights,
};
use slalom_core::model::{LinearOp, Padding};
use slalom_core::quantize::QLinear;
use slalom_core::verify::SeparablePair;

fn centered(v: &BigInt, p: u32) -> i64 {
    let p = BigInt::from(p);
    let mut r = v % &p;
    if r.is_negative() {
        r += &p;
    }
    if r > (&p - 1) / 2 {
        r -= &p;
    }
    r.to_i64().unwrap()
}

/// Padding before the first row/column and output extent, recomputed here
/// from first principles.
fn axis(n: usize, k: usize, stride: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Valid => (0, (n - k) / stride + 1),
        Padding::Same => {
            let out = n.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(n);
            (total / 2, out)
        }
    }
}

/// Direct loops in arbitrary precision, bias-free, unreduced.
fn naive(op: &LinearOp, x: &[i64], w: &[i64]) -> Vec<BigInt> {
    let big = |v: i64| BigInt::from(v);
    match *op {
        LinearOp::Fc { h_in, h_out } => (0..h_out)
            .map(|j| {
                (0..h_in).fold(BigInt::zero(), |acc, i| {
                    acc + big(x[i]) * big(w[i * h_out + j])
                })
            })
            .collect(),
        LinearOp::Pointwise {
            h,
            w: wd,
            c_in,
            c_out,
        } => {
            let mut y = Vec::new();
            for px in 0..h * wd {
                for o in 0..c_out {
                    y.push((0..c_in).fold(BigInt::zero(), |acc, c| {
                        acc + big(x[px * c_in + c]) * big(w[c * c_out + o])
                    }));
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
        } => {
            let (ph, ho) = axis(h, kernel, stride, padding);
            let (pw, wo) = axis(wd, kernel, stride, padding);
            let mut y = Vec::new();
            for oi in 0..ho {
                for oj in 0..wo {
                    for o in 0..c_out {
                        let mut acc = BigInt::zero();
                        for ki in 0..kernel {
                            for kj in 0..kernel {
                                let (ii, jj) = (
                                    (oi * stride + ki) as isize - ph as isize,
                                    (oj * stride + kj) as isize - pw as isize,
                                );
                                if ii < 0 || jj < 0 || ii >= h as isize || jj >= wd as isize {
                                    continue;
                                }
                                for c in 0..c_in {
                                    let xv = x[(ii as usize * wd + jj as usize) * c_in + c];
                                    let wv = w[((ki * kernel + kj) * c_in + c) * c_out + o];
                                    acc += big(xv) * big(wv);
                                }
                            }
                        }
                        y.push(acc);
                    }
                }
            }
            y
        }
        LinearOp::Depthwise {
            h,
            w: wd,
            c_in,
            kernel,
            stride,
            padding,
            ..
        } => {
            let (ph, ho) = axis(h, kernel, stride, padding);
            let (pw, wo) = axis(wd, kernel, stride, padding);
            let mut y = Vec::new();
            for oi in 0..ho {
                for oj in 0..wo {
                    for c in 0..c_in {
                        let mut acc = BigInt::zero();
                        for ki in 0..kernel {
                            for kj in 0..kernel {
                                let (ii, jj) = (
                                    (oi * stride + ki) as isize - ph as isize,
                                    (oj * stride + kj) as isize - pw as isize,
                                );
                                if ii < 0 || jj < 0 || ii >= h as isize || jj >= wd as isize {
                                    continue;
                                }
                                acc += big(x[(ii as usize * wd + jj as usize) * c_in + c])
                                    * big(w[(ki * kernel + kj) * c_in + c]);
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

fn reduce_all(v: &[BigInt], p: &FieldParams) -> Vec<i64> {
    v.iter().map(|b| centered(b, p.modulus())).collect()
}

fn fc() -> impl Strategy<Value = LinearOp> {
    (1usize..24, 1usize..24).prop_map(|(h_in, h_out)| LinearOp::Fc { h_in, h_out })
}

fn pointwise() -> impl Strategy<Value = LinearOp> {
    (1usize..5, 1usize..5, 1usize..6, 1usize..6)
        .prop_map(|(h, w, c_in, c_out)| LinearOp::Pointwise { h, w, c_in, c_out })
}

fn padding() -> impl Strategy<Value = Padding> {
    prop_oneof![Just(Padding::Same), Just(Padding::Valid)]
}

fn conv() -> impl Strategy<Value = LinearOp> {
    (
        prop_oneof![Just(1usize), Just(3), Just(5)],
        1usize..3,
        padding(),
        1usize..4,
        1usize..4,
    )
        .prop_flat_map(|(k, stride, padding, c_in, c_out)| {
            (k..k + 4, k..k + 4).prop_map(move |(h, w)| LinearOp::Conv2d {
                h,
                w,
                c_in,
                c_out,
                kernel: k,
                stride,
                padding,
            })
        })
}

fn depthwise() -> impl Strategy<Value = LinearOp> {
    (
        prop_oneof![Just(1usize), Just(3), Just(5)],
        1usize..3,
        padding(),
        1usize..5,
    )
        .prop_flat_map(|(k, stride, padding, c)| {
            (k..k + 4, k..k + 4).prop_map(move |(h, w)| LinearOp::Depthwise {
                h,
                w,
                c_in: c,
                c_out: c,
                kernel: k,
                stride,
                padding,
            })
        })
}

fn any_op() -> impl Strategy<Value = LinearOp> {
    prop_oneof![fc(), pointwise(), conv(), depthwise()]
}

fn residues(rng: &mut ChaCha8Rng, n: usize, p: &FieldParams) -> Vec<i64> {
    let h = p.half() as i64;
    (0..n).map(|_| rng.random_range(-h..=h)).collect()
}

fn small(rng: &mut ChaCha8Rng, n: usize, bound: i64) -> Vec<i64> {
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

/// Trusted, blinded-f64 and unblinded-f32 kernels against the naive loops.
fn oracle_case(op: LinearOp, seed: u64) -> Result<(), TestCaseError> {
    let p = FieldParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = residues(&mut rng, op.weight_len(), &p);
    let x = residues(&mut rng, op.input_len(), &p);
    let expected = reduce_all(&naive(&op, &x, &w), &p);

    let mut ops = LayerOps::default();
    let y = linear_forward(&op, &x, &w, None, &p, &mut ops).unwrap();
    prop_assert_eq!(&y, &expected);
    prop_assert_eq!(ops.multiplications, cost_f(&op));

    let mut ops = LayerOps::default();
    let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let yb = untrusted_forward(
        &op,
        &xf,
        &UntrustedWeights::new(&w),
        UntrustedMode::BlindedF64,
        &p,
        &mut ops,
    )
    .unwrap();
    prop_assert_eq!(yb.iter().map(|&v| v as i64).collect::<Vec<_>>(), expected);
    prop_assert_eq!(ops.multiplications, cost_f(&op));

    // Quantized-range operands for the single-precision path.
    let ws = small(&mut rng, op.weight_len(), 1 << 12);
    let xs = small(&mut rng, op.input_len(), 1 << 12);
    let exact: Vec<i64> = naive(&op, &xs, &ws)
        .iter()
        .map(|b| b.to_i64().unwrap())
        .collect();
    prop_assert_eq!(
        linear_forward_wide(&op, &xs, &ws, None).unwrap(),
        exact.clone()
    );
    let xf: Vec<f64> = xs.iter().map(|&v| v as f64).collect();
    let mut ops = LayerOps::default();
    let yu = untrusted_forward(
        &op,
        &xf,
        &UntrustedWeights::new(&ws),
        UntrustedMode::UnblindedF32,
        &p,
        &mut ops,
    )
    .unwrap();
    let exact_red: Vec<i64> = exact.iter().map(|&v| p.reduce_i64(v) as i64).collect();
    prop_assert_eq!(yu.iter().map(|&v| v as i64).collect::<Vec<_>>(), exact_red);
    prop_assert_eq!(ops.multiplications, cost_f(&op));
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fc_matches_naive_loops(op in fc(), seed in any::<u64>()) {
        oracle_case(op, seed)?;
    }

    #[test]
    fn pointwise_matches_naive_loops(op in pointwise(), seed in any::<u64>()) {
        oracle_case(op, seed)?;
    }

    #[test]
    fn conv_matches_naive_loops(op in conv(), seed in any::<u64>()) {
        oracle_case(op, seed)?;
    }

    #[test]
    fn depthwise_matches_naive_loops(op in depthwise(), seed in any::<u64>()) {
        oracle_case(op, seed)?;
    }

    #[test]
    fn transpose_is_the_adjoint(op in any_op(), seed in any::<u64>()) {
        let p = FieldParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = residues(&mut rng, op.weight_len(), &p);
        let x = residues(&mut rng, op.input_len(), &p);
        let s = residues(&mut rng, op.output_len(), &p);
        let y = reduce_all(&naive(&op, &x, &w), &p);
        let ws = linear_transpose(&op, &s, &w, &p, &mut LayerOps::default()).unwrap();
        let lhs: BigInt = y.iter().zip(&s).map(|(&a, &b)| BigInt::from(a) * BigInt::from(b)).sum();
        let rhs: BigInt = x.iter().zip(&ws).map(|(&a, &b)| BigInt::from(a) * BigInt::from(b)).sum();
        prop_assert_eq!(centered(&lhs, p.modulus()), centered(&rhs, p.modulus()));
    }

    #[test]
    fn bias_is_added_per_channel(op in any_op(), seed in any::<u64>()) {
        let p = FieldParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = small(&mut rng, op.weight_len(), 100);
        let b = small(&mut rng, op.bias_len(), 1 << 16);
        let zero = vec![0; op.input_len()];
        let y = linear_forward(&op, &zero, &w, Some(&b), &p, &mut LayerOps::default()).unwrap();
        let c = b.len();
        prop_assert!(y.iter().enumerate().all(|(i, &v)| v == b[i % c]));
    }

    #[test]
    fn im2col_has_the_patch_shape(op in prop_oneof![conv(), depthwise()]) {
        let g = ConvGeom::of(&op).unwrap().unwrap();
        let x: Vec<i64> = (0..op.input_len() as i64).collect();
        let cols = im2col(&x, &g);
        let (ho, wo) = op.out_hw().unwrap();
        prop_assert_eq!(cols.len(), ho * wo * op.kernel_size().pow(2) * g.c);
    }

    /// A depthwise conv followed by a pointwise conv is one linear operator;
    /// probing it with basis vectors recovers a matrix that reproduces the
    /// pair on random inputs.
    #[test]
    fn separable_pair_is_one_linear_operator(
        (h, w, c, c_out, kernel, stride) in (2usize..5, 2usize..5, 1usize..4, 1usize..4, prop_oneof![Just(1usize), Just(3)], 1usize..3),
        seed in any::<u64>(),
    ) {
        let p = FieldParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dw = LinearOp::Depthwise { h, w, c_in: c, c_out: c, kernel, stride, padding: Padding::Same };
        let (ho, wo) = dw.out_hw().unwrap();
        let pw = LinearOp::Pointwise { h: ho, w: wo, c_in: c, c_out };
        let pair = SeparablePair {
            depthwise: QLinear { index: 0, op: dw, weight: residues(&mut rng, dw.weight_len(), &p), bias: vec![0; c] },
            pointwise: QLinear { index: 1, op: pw, weight: residues(&mut rng, pw.weight_len(), &p), bias: vec![0; c_out] },
        };
        let n_in = dw.input_len();
        let n_out = pw.output_len();
        let mut matrix = Vec::with_capacity(n_in * n_out);
        for i in 0..n_in {
            let mut e = vec![0i64; n_in];
            e[i] = 1;
            matrix.extend(pair.forward(&e, &p, &mut LayerOps::default()).unwrap());
        }
        let x = residues(&mut rng, n_in, &p);
        let composed = reduce_all(&naive(&LinearOp::Fc { h_in: n_in, h_out: n_out }, &x, &matrix), &p);
        let mid = reduce_all(&naive(&dw, &x, &pair.depthwise.weight), &p);
        let two_step = reduce_all(&naive(&pw, &mid, &pair.pointwise.weight), &p);
        prop_assert_eq!(&composed, &two_step);
        prop_assert_eq!(pair.forward(&x, &p, &mut LayerOps::default()).unwrap(), composed);

        // The folded check vector is the probed matrix applied to s.
        let s = residues(&mut rng, n_out, &p);
        let folded = pair.fold(&s, &p, &mut LayerOps::default()).unwrap();
        let by_matrix: Vec<i64> = (0..n_in)
            .map(|i| centered(&(0..n_out).map(|j| BigInt::from(matrix[i * n_out + j]) * BigInt::from(s[j])).sum(), p.modulus()))
            .collect();
        prop_assert_eq!(folded, by_matrix);
    }
}

#[test]
fn fc_identity() {
    let p = FieldParams::default();
    let op = LinearOp::Fc { h_in: 2, h_out: 2 };
    let y = linear_forward(
        &op,
        &[1, 2],
        &[1, 0, 0, 1],
        Some(&[0, 0]),
        &p,
        &mut LayerOps::default(),
    )
    .unwrap();
    assert_eq!(y, vec![1, 2]);
}

#[test]
fn all_ones_conv_center_is_nine() {
    let p = FieldParams::default();
    let op = LinearOp::conv(3, 3, 1, 1, 3, 1);
    let y = linear_forward(&op, &[1; 9], &[1; 9], None, &p, &mut LayerOps::default()).unwrap();
    assert_eq!(y, vec![4, 6, 4, 6, 9, 6, 4, 6, 4]);
}

#[test]
fn fc_100_to_200_costs_20000() {
    let p = FieldParams::default();
    let op = LinearOp::Fc {
        h_in: 100,
        h_out: 200,
    };
    let mut ops = LayerOps::default();
    linear_forward(&op, &[1; 100], &vec![1; 20_000], None, &p, &mut ops).unwrap();
    assert_eq!(ops.multiplications, 20_000);
    assert_eq!(cost_f(&op), 20_000);
}

#[test]
fn im2col_examples() {
    let one = ConvGeom::new(2, 2, 3, 1, 1, Padding::Same).unwrap();
    let x: Vec<i64> = (0..12).collect();
    assert_eq!(im2col(&x, &one), x);
    let g = ConvGeom::new(4, 4, 2, 3, 1, Padding::Same).unwrap();
    assert_eq!(im2col(&vec![1i64; 32], &g).len(), 16 * 9 * 2);
}

#[test]
fn conv_matches_direct_loops_on_five_by_five_by_three() {
    let p = FieldParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let op = LinearOp::conv(5, 5, 3, 4, 3, 1);
    let w = small(&mut rng, op.weight_len(), 300);
    let x = small(&mut rng, op.input_len(), 300);
    let expected: Vec<i64> = naive(&op, &x, &w)
        .iter()
        .map(|b| b.to_i64().unwrap())
        .collect();
    assert_eq!(
        linear_forward(&op, &x, &w, None, &p, &mut LayerOps::default()).unwrap(),
        expected
    );
}

#[test]
fn shape_mismatches_are_errors() {
    let p = FieldParams::default();
    let op = LinearOp::Fc { h_in: 3, h_out: 2 };
    assert!(linear_forward(&op, &[1, 2], &[0; 6], None, &p, &mut LayerOps::default()).is_err());
    assert!(linear_forward(&op, &[1, 2, 3], &[0; 5], None, &p, &mut LayerOps::default()).is_err());
    assert!(linear_forward(
        &op,
        &[1, 2, 3],
        &[0; 6],
        Some(&[1]),
        &p,
        &mut LayerOps::default()
    )
    .is_err());
    assert!(linear_transpose(&op, &[1, 2, 3], &[0; 6], &p, &mut LayerOps::default()).is_err());
    let w = UntrustedWeights::new(&[0; 6]);
    assert!(untrusted_forward(
        &op,
        &[1.0],
        &w,
        UntrustedMode::BlindedF64,
        &p,
        &mut LayerOps::default()
    )
    .is_err());
}

#[test]
fn single_precision_refuses_inputs_it_cannot_represent() {
    let p = FieldParams::default();
    let op = LinearOp::Fc { h_in: 1, h_out: 1 };
    let w = UntrustedWeights::new(&[1]);
    let x = [(1u64 << 24) as f64 + 1.0];
    assert!(untrusted_forward(
        &op,
        &x,
        &w,
        UntrustedMode::UnblindedF32,
        &p,
        &mut LayerOps::default()
    )
    .is_err());
    assert!(untrusted_forward(
        &op,
        &[p.half()],
        &w,
        UntrustedMode::BlindedF64,
        &p,
        &mut LayerOps::default()
    )
    .is_ok());
}
