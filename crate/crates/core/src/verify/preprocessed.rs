use crate::field::{FieldParams, PrfKey};
use crate::kernels::{dot_i64, expect_len, linear_forward, linear_transpose, LayerOps};
use crate::quantize::{QLinear, QuantizedModel};

use super::{CheckOutcome, CheckSource, SoundnessConfig, Verdict, VerifyError};

/// Per-run check secrets. Each repetition has one master vector `s` over
/// `S`; linear layer `i` uses its first `|y_i|` entries and stores
/// `s~_i = W_i s_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FreivaldsSecret {
    run_id: u64,
    masters: Vec<Vec<i64>>,
    folded: Vec<Vec<Vec<i64>>>,
    out_lens: Vec<usize>,
}

impl FreivaldsSecret {
    pub fn run_id(&self) -> u64 {
        self.run_id
    }

    pub fn repetitions(&self) -> usize {
        self.masters.len()
    }

    pub fn layers(&self) -> usize {
        self.out_lens.len()
    }

    /// `s_i` for `repetition`; `len` is the layer's output size.
    pub fn s(&self, repetition: usize, len: usize) -> &[i64] {
        &self.masters[repetition][..len]
    }

    pub fn output_len(&self, layer: usize) -> usize {
        self.out_lens[layer]
    }

    pub fn s_tilde(&self, repetition: usize, layer: usize) -> &[i64] {
        &self.folded[repetition][layer]
    }

    /// Stored `s~` entries: the linear-layer input sizes, summed, per
    /// repetition.
    pub fn folded_elements(&self) -> usize {
        self.folded.iter().flatten().map(Vec::len).sum()
    }
}

/// Draws the run's master vectors and folds them through every linear
/// layer. Returns the multiplications spent alongside the secret.
pub fn precompute_secrets(
    model: &QuantizedModel,
    cfg: &SoundnessConfig,
    key: &PrfKey,
    run_id: u64,
) -> Result<(FreivaldsSecret, LayerOps), VerifyError> {
    let layers = model.linear_layers();
    let longest = layers.iter().map(|l| l.op.output_len()).max().unwrap_or(0);
    let mut ops = LayerOps::default();
    let mut masters = Vec::new();
    let mut folded = Vec::new();
    for rep in 0..cfg.repetitions() {
        let tag = format!("freivalds-secret/{run_id}/{rep}");
        let s = CheckSource::new(key, tag.as_bytes(), *cfg.field()).draw(longest);
        let per_layer = layers
            .iter()
            .map(|l| {
                linear_transpose(
                    &l.op,
                    &s[..l.op.output_len()],
                    &l.weight,
                    cfg.field(),
                    &mut ops,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        masters.push(s);
        folded.push(per_layer);
    }
    let out_lens = layers.iter().map(|l| l.op.output_len()).collect();
    Ok((
        FreivaldsSecret {
            run_id,
            masters,
            folded,
            out_lens,
        },
        ops,
    ))
}

/// One repetition of `y^T s = x^T s~`.
pub fn check_with_secret(
    x: &[i64],
    y: &[i64],
    s: &[i64],
    s_tilde: &[i64],
    params: &FieldParams,
    ops: &mut LayerOps,
) -> bool {
    dot_i64(y, s, params, ops) == dot_i64(x, s_tilde, params, ops)
}

/// Checks one example of linear layer `layer` against the stored secret;
/// `k (|x| + |y|)` multiplications.
pub fn check_preprocessed(
    x: &[i64],
    y: &[i64],
    secret: &FreivaldsSecret,
    layer: usize,
    cfg: &SoundnessConfig,
) -> Result<CheckOutcome, VerifyError> {
    if layer >= secret.layers() {
        return Err(VerifyError::MissingSecret(layer));
    }
    expect_len("input", x.len(), secret.s_tilde(0, layer).len())?;
    expect_len("output", y.len(), secret.output_len(layer))?;
    let mut ops = LayerOps::default();
    for rep in 0..secret.repetitions() {
        if !check_with_secret(
            x,
            y,
            secret.s(rep, y.len()),
            secret.s_tilde(rep, layer),
            cfg.field(),
            &mut ops,
        ) {
            return Ok(CheckOutcome {
                verdict: Verdict::Reject {
                    repetition: rep as u32,
                },
                ops,
            });
        }
    }
    Ok(CheckOutcome {
        verdict: Verdict::Accept,
        ops,
    })
}

/// A depthwise conv followed directly by a pointwise conv, checked as one
/// linear operator.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparablePair {
    pub depthwise: QLinear,
    pub pointwise: QLinear,
}

impl SeparablePair {
    /// `pw(dw(x))` over `Z_p`, bias-free.
    pub fn forward(
        &self,
        x: &[i64],
        params: &FieldParams,
        ops: &mut LayerOps,
    ) -> Result<Vec<i64>, VerifyError> {
        let mid = linear_forward(
            &self.depthwise.op,
            x,
            &self.depthwise.weight,
            None,
            params,
            ops,
        )?;
        Ok(linear_forward(
            &self.pointwise.op,
            &mid,
            &self.pointwise.weight,
            None,
            params,
            ops,
        )?)
    }

    /// `s~ = W_dw (W_pw s)`, one entry per pair input.
    pub fn fold(
        &self,
        s: &[i64],
        params: &FieldParams,
        ops: &mut LayerOps,
    ) -> Result<Vec<i64>, VerifyError> {
        let mid = linear_transpose(&self.pointwise.op, s, &self.pointwise.weight, params, ops)?;
        Ok(linear_transpose(
            &self.depthwise.op,
            &mid,
            &self.depthwise.weight,
            params,
            ops,
        )?)
    }
}
