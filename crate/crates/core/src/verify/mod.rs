//! Freivalds checks for outsourced linear layers.
//!
//! Every check proves nothing about the bias: the relation verified is
//! `y = x W` and the trusted side adds `b` afterwards.
//!
//! Three regimes are provided:
//!
//! * online checks that draw fresh vectors from `S = [-rho, rho]` and use the
//!   weights ([`check_online`]), in batched, kernel-folding or right-side
//!   form depending on the operator,
//! * preprocessed checks `y^T s = x^T s~` with `s~ = W s` computed ahead of
//!   time ([`precompute_secrets`], [`check_preprocessed`]),
//! * empirical soundness measurement with tiny check sets
//!   ([`soundness_experiment`]).

mod experiment;
mod online;
mod preprocessed;
mod tamper;

pub use experiment::{
    clopper_pearson, exhaustive_acceptance, soundness_experiment, CheckRegime, ExperimentResult,
};
pub use online::{
    check_batched_left, check_conv_folded, check_conv_folded_with, check_left_with, check_online,
    check_plain_matmul, check_pointwise_right, check_pointwise_right_with,
};
pub use preprocessed::{
    check_preprocessed, check_with_secret, precompute_secrets, FreivaldsSecret, SeparablePair,
};
pub use tamper::Tamper;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldParams, PrfKey, PrfStream, SampleRange};
use crate::kernels::{KernelError, LayerOps};

/// Production configurations must reach this many bits per layer.
pub const MIN_SOUNDNESS_BITS: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("at least one repetition is required")]
    NoRepetitions,
    #[error("per-layer soundness of {bits:.1} bits is below the required {MIN_SOUNDNESS_BITS}")]
    WeakSoundness { bits: f64 },
    #[error("no precomputed secret for linear layer {0}")]
    MissingSecret(usize),
    #[error("batch of {xs} inputs but {ys} outputs")]
    BatchMismatch { xs: usize, ys: usize },
    #[error("soundness experiments need at least 1000 trials, got {0}")]
    TooFewTrials(usize),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Repetitions `k` and the field (which carries the check range `rho`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoundnessConfig {
    repetitions: u32,
    field: FieldParams,
}

impl Default for SoundnessConfig {
    fn default() -> Self {
        SoundnessConfig {
            repetitions: 2,
            field: FieldParams::default(),
        }
    }
}

impl SoundnessConfig {
    /// A configuration fit for real runs: at least 40 bits per layer.
    pub fn new(repetitions: u32, field: FieldParams) -> Result<Self, VerifyError> {
        let cfg = SoundnessConfig::measurement(repetitions, field)?;
        let bits = cfg.soundness_bits();
        if bits < MIN_SOUNDNESS_BITS {
            return Err(VerifyError::WeakSoundness { bits });
        }
        Ok(cfg)
    }

    /// Any `k >= 1`; for experiments where acceptance has to be observable.
    pub fn measurement(repetitions: u32, field: FieldParams) -> Result<Self, VerifyError> {
        if repetitions == 0 {
            return Err(VerifyError::NoRepetitions);
        }
        Ok(SoundnessConfig { repetitions, field })
    }

    pub fn repetitions(&self) -> u32 {
        self.repetitions
    }

    pub fn field(&self) -> &FieldParams {
        &self.field
    }

    /// `|S| = 2 rho + 1`.
    pub fn check_set_size(&self) -> u64 {
        self.field.check_set_size()
    }

    /// `(1/|S|)^k`.
    pub fn per_layer_bound(&self) -> f64 {
        (self.check_set_size() as f64).powi(-(self.repetitions as i32))
    }

    /// `n / |S|^k` for `n` checked layers.
    pub fn run_bound(&self, checks: usize) -> f64 {
        checks as f64 * self.per_layer_bound()
    }

    pub fn soundness_bits(&self) -> f64 {
        f64::from(self.repetitions) * (self.check_set_size() as f64).log2()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    /// The first repetition that failed.
    Reject {
        repetition: u32,
    },
}

impl Verdict {
    pub fn accepted(&self) -> bool {
        matches!(self, Verdict::Accept)
    }
}

/// A verdict and the multiplications spent reaching it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckOutcome {
    pub verdict: Verdict,
    pub ops: LayerOps,
}

/// Draws check vectors over `S` from a keyed stream.
#[derive(Debug)]
pub struct CheckSource {
    stream: PrfStream,
    field: FieldParams,
}

impl CheckSource {
    pub fn new(key: &PrfKey, tag: &[u8], field: FieldParams) -> Self {
        CheckSource {
            stream: PrfStream::new(key, tag),
            field,
        }
    }

    /// Fresh vectors for run `run_id`.
    pub fn for_run(key: &PrfKey, run_id: u64, field: FieldParams) -> Self {
        CheckSource::new(key, format!("freivalds-online/{run_id}").as_bytes(), field)
    }

    pub fn draw(&mut self, len: usize) -> Vec<i64> {
        self.stream
            .sample(len, SampleRange::CheckRange, &self.field)
            .into_iter()
            .map(|v| v as i64)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_meets_forty_bits() {
        let cfg = SoundnessConfig::default();
        assert_eq!(cfg.repetitions(), 2);
        assert_eq!(cfg.check_set_size(), (1 << 20) + 1);
        assert!(cfg.soundness_bits() > 40.0);
        assert_eq!(
            SoundnessConfig::new(2, FieldParams::default()).unwrap(),
            cfg
        );
    }

    #[test]
    fn zero_repetitions_is_a_config_error() {
        assert_eq!(
            SoundnessConfig::measurement(0, FieldParams::default()),
            Err(VerifyError::NoRepetitions)
        );
    }

    #[test]
    fn tiny_sets_are_measurement_only() {
        let tiny = FieldParams::default().with_check_range(1).unwrap();
        assert!(matches!(
            SoundnessConfig::new(2, tiny),
            Err(VerifyError::WeakSoundness { .. })
        ));
        let cfg = SoundnessConfig::measurement(2, tiny).unwrap();
        assert_eq!(cfg.per_layer_bound(), 1.0 / 9.0);
        assert_eq!(cfg.run_bound(8), 8.0 / 9.0);
    }

    #[test]
    fn check_vectors_stay_in_range() {
        let f = FieldParams::default().with_check_range(3).unwrap();
        let mut src = CheckSource::new(&PrfKey::from_seed(0), b"t", f);
        assert!(src.draw(1000).iter().all(|v| (-3..=3).contains(v)));
    }
}
