//! Protocol orchestration across the trusted / untrusted boundary.
//!
//! The trusted side walks the quantized model itself. Each linear layer is
//! sent over an [`ExecutorBoundary`] as plaintext `x_i` (integrity modes) or
//! blinded `x_i + r_i` (private modes); the reply is unblinded, checked,
//! given its bias and handed back to the walker, which applies every
//! non-linearity on the trusted side. A failed check stops the run before
//! any further request is sent.

mod boundary;
mod session;

pub use boundary::{
    decode, encode, Adversary, Direction, ExecutorBoundary, Request, Response, Strategy,
    Transcript, TranscriptEntry, UntrustedExecutor, UntrustedHost, ELEMENT_BYTES,
};
pub use session::Session;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::blinding::BlindingError;
use crate::kernels::{KernelError, OpCounter};
use crate::quantize::QuantError;
use crate::verify::VerifyError;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("model has no passing range certificate")]
    NotCertified,
    #[error("preprocessed checks need a secret prepared for this run")]
    MissingSecret,
    #[error("private mode needs a blinding tape")]
    TapeRequired,
    #[error("{what} was prepared for run {found}, this is run {expected}")]
    RunMismatch {
        what: &'static str,
        expected: u64,
        found: u64,
    },
    #[error("check field modulus {check} differs from model modulus {model}")]
    FieldMismatch { check: u32, model: u32 },
    #[error("{0}")]
    Unsupported(String),
    #[error("no inputs given")]
    EmptyBatch,
    #[error(transparent)]
    Blinding(#[from] BlindingError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// How one inference is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Everything on the trusted side.
    Baseline,
    /// Outsourced, each example checked on its own.
    VerifyPlain,
    /// Outsourced, one check per layer per batch.
    VerifyBatched,
    /// Outsourced, checked against precomputed secrets.
    VerifyPreproc,
    /// Outsourced blinded, unchecked.
    Private,
    /// Outsourced blinded and checked against precomputed secrets.
    PrivateVerify,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Baseline,
        Mode::VerifyPlain,
        Mode::VerifyBatched,
        Mode::VerifyPreproc,
        Mode::Private,
        Mode::PrivateVerify,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::VerifyPlain => "verify-plain",
            Mode::VerifyBatched => "verify-batched",
            Mode::VerifyPreproc => "verify-preproc",
            Mode::Private => "private",
            Mode::PrivateVerify => "private-verify",
        }
    }

    pub fn is_private(&self) -> bool {
        matches!(self, Mode::Private | Mode::PrivateVerify)
    }

    pub fn verifies(&self) -> bool {
        !matches!(self, Mode::Baseline | Mode::Private)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode '{s}'"))
    }
}

/// Check regime for [`Session::run_verified`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Plain,
    Batched(usize),
    Preprocessed,
}

/// What the trusted side concluded about one linear layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LayerStatus {
    /// All checks passed, or no check was required.
    Accepted,
    Rejected {
        repetition: u32,
    },
    /// The reply had the wrong length.
    Malformed,
    /// The sealed unblinding factor was missing or failed to open.
    AuthFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerVerdict {
    pub layer: usize,
    /// Freivalds checks run for this layer.
    pub checks: usize,
    #[serde(flatten)]
    pub status: LayerStatus,
}

/// Disjoint work categories; their sum is the run's total.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// Trusted-side evaluation: exact kernels in baseline, bias addition and
    /// blinding arithmetic otherwise.
    pub trusted: OpCounter,
    pub verification: OpCounter,
    pub untrusted: OpCounter,
    /// Offline phase: folding check secrets and computing `u_i`.
    pub preprocessing: OpCounter,
}

impl Counters {
    pub fn total_multiplications(&self) -> u64 {
        self.trusted.multiplications
            + self.verification.multiplications
            + self.untrusted.multiplications
            + self.preprocessing.multiplications
    }
}

/// Wall-clock seconds per phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub preprocessing: f64,
    pub online: f64,
    pub verification: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: String,
    pub mode: Mode,
    pub run_id: u64,
    pub batch: usize,
    /// Scale-`l` outputs, one per input; `None` is the abort symbol.
    pub outputs: Option<Vec<Vec<i64>>>,
    pub verdicts: Vec<LayerVerdict>,
    pub counters: Counters,
    /// Request and response bytes.
    pub transcript_bytes: usize,
    /// Sealed blob bytes read from untrusted storage.
    pub storage_bytes: usize,
    /// Freivalds checks performed.
    pub checks: usize,
    /// Union bound `checks / |S|^k` on accepting a wrong output; `None`
    /// when nothing is verified.
    pub soundness_bound: Option<f64>,
    pub timings: Timings,
    #[serde(skip)]
    pub transcript: Transcript,
}

impl RunReport {
    pub fn accepted(&self) -> bool {
        self.outputs.is_some()
    }

    /// Hex SHA-256 over the encoded outputs; `None` after an abort.
    pub fn output_digest(&self) -> Option<String> {
        let outs = self.outputs.as_ref()?;
        let mut h = Sha256::new();
        for o in outs {
            h.update(encode(o));
        }
        Some(hex::encode(h.finalize()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
            assert_eq!(
                serde_json::to_string(&m).unwrap(),
                format!("\"{}\"", m.name())
            );
        }
        assert!("fast".parse::<Mode>().is_err());
    }
}
