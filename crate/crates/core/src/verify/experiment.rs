use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::field::PrfKey;
use crate::kernels::{linear_forward, linear_transpose, LayerOps};
use crate::model::{LinearKind, LinearOp};
use crate::quantize::QLinear;

use super::{check_online, check_with_secret, CheckSource, SoundnessConfig, Tamper, VerifyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckRegime {
    Online,
    Preprocessed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub kind: LinearKind,
    pub tamper: Tamper,
    pub regime: CheckRegime,
    pub repetitions: u32,
    pub check_set_size: u64,
    pub trials: usize,
    pub accepted: usize,
    /// Empirical acceptance rate.
    pub rate: f64,
    /// 99% Clopper-Pearson interval for the acceptance probability.
    pub ci_low: f64,
    pub ci_high: f64,
    /// `(1/|S|)^k` for tampered outputs; 1 for the honest strategy.
    pub bound: f64,
    pub pass: bool,
}

/// Exact two-sided Clopper-Pearson interval for `successes` out of `trials`.
pub fn clopper_pearson(successes: usize, trials: usize, confidence: f64) -> (f64, f64) {
    let alpha = 1.0 - confidence;
    let (x, n) = (successes as f64, trials as f64);
    let low = if successes == 0 {
        0.0
    } else {
        Beta::new(x, n - x + 1.0)
            .expect("positive shape")
            .inverse_cdf(alpha / 2.0)
    };
    let high = if successes == trials {
        1.0
    } else {
        Beta::new(x + 1.0, n - x)
            .expect("positive shape")
            .inverse_cdf(1.0 - alpha / 2.0)
    };
    (low, high)
}

/// Enumerates every `s` in `[-rho, rho]^len` and counts acceptances.
pub fn exhaustive_acceptance(
    len: usize,
    rho: i64,
    mut accept: impl FnMut(&[i64]) -> bool,
) -> (u64, u64) {
    let mut s = vec![-rho; len];
    let (mut yes, mut total) = (0u64, 0u64);
    loop {
        total += 1;
        yes += u64::from(accept(&s));
        let mut i = 0;
        loop {
            if i == len {
                return (yes, total);
            }
            if s[i] < rho {
                s[i] += 1;
                break;
            }
            s[i] = -rho;
            i += 1;
        }
    }
}

fn experiment_layer(kind: LinearKind, rng: &mut ChaCha8Rng) -> QLinear {
    let op = match kind {
        LinearKind::Fc => LinearOp::Fc { h_in: 12, h_out: 8 },
        LinearKind::Conv => LinearOp::conv(4, 4, 2, 3, 3, 1),
        LinearKind::Depthwise => LinearOp::depthwise(4, 4, 3, 3, 1),
        LinearKind::Pointwise => LinearOp::Pointwise {
            h: 3,
            w: 3,
            c_in: 2,
            c_out: 4,
        },
    };
    QLinear {
        index: 0,
        op,
        weight: (0..op.weight_len())
            .map(|_| rng.random_range(-64..=64))
            .collect(),
        bias: vec![0; op.bias_len()],
    }
}

/// Measures how often a corrupted output of a random `kind` layer passes
/// the check under `cfg` (meant for tiny check sets).
pub fn soundness_experiment(
    kind: LinearKind,
    tamper: Tamper,
    regime: CheckRegime,
    cfg: &SoundnessConfig,
    trials: usize,
    seed: u64,
) -> Result<ExperimentResult, VerifyError> {
    if trials < 1000 {
        return Err(VerifyError::TooFewTrials(trials));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = experiment_layer(kind, &mut rng);
    let key = PrfKey::from_seed(seed);
    let params = cfg.field();
    let row_len = layer.op.bias_len();
    let mut accepted = 0;
    for trial in 0..trials {
        let x: Vec<i64> = (0..layer.op.input_len())
            .map(|_| rng.random_range(-256..=256))
            .collect();
        let mut y = linear_forward(
            &layer.op,
            &x,
            &layer.weight,
            None,
            params,
            &mut LayerOps::default(),
        )?;
        tamper.apply(&mut y, row_len, &mut rng, params);
        let mut src = CheckSource::for_run(&key, trial as u64, *params);
        let ok = match regime {
            CheckRegime::Online => check_online(&layer, &[&x], &[&y], cfg, &mut src)?
                .verdict
                .accepted(),
            CheckRegime::Preprocessed => (0..cfg.repetitions()).all(|_| {
                let s = src.draw(y.len());
                let mut ops = LayerOps::default();
                let t = linear_transpose(&layer.op, &s, &layer.weight, params, &mut ops)
                    .expect("shapes fixed above");
                check_with_secret(&x, &y, &s, &t, params, &mut ops)
            }),
        };
        accepted += usize::from(ok);
    }
    let rate = accepted as f64 / trials as f64;
    let (ci_low, ci_high) = clopper_pearson(accepted, trials, 0.99);
    let (bound, pass) = if tamper.is_honest() {
        (1.0, accepted == trials)
    } else {
        let b = cfg.per_layer_bound();
        (b, ci_high >= rate && rate <= b + (ci_high - ci_low))
    };
    Ok(ExperimentResult {
        kind,
        tamper,
        regime,
        repetitions: cfg.repetitions(),
        check_set_size: cfg.check_set_size(),
        trials,
        accepted,
        rate,
        ci_low,
        ci_high,
        bound,
        pass,
    })
}
