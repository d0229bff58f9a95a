//! Keyed counter-mode pseudorandom field streams.
//!
//! Each stream is AES-128 in counter mode under a key derived from a 256-bit
//! master key and a domain tag, so blinding factors and check vectors drawn
//! from the same master key are independent. Uniform values over `Z_p` and
//! over the check set are obtained by rejection sampling on masked 32-bit
//! words.

use aes::cipher::{generic_array::GenericArray, BlockEncrypt, KeyInit};
use aes::Aes128;
use rand::TryRngCore;
use sha2::{Digest, Sha256};

use super::{FieldError, FieldParams, FieldTensor};

/// 256-bit master secret held by the trusted executor.
#[derive(Clone, PartialEq, Eq)]
pub struct PrfKey([u8; 32]);

impl std::fmt::Debug for PrfKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("PrfKey(..)")
    }
}

impl PrfKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        PrfKey(bytes)
    }

    /// Expands a small integer seed; for tests and reproducible experiments.
    pub fn from_seed(seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"prf-key-from-seed");
        h.update(seed.to_le_bytes());
        PrfKey(h.finalize().into())
    }

    pub fn generate() -> Result<Self, FieldError> {
        let mut bytes = [0u8; 32];
        rand::rngs::OsRng
            .try_fill_bytes(&mut bytes)
            .map_err(|e| FieldError::Entropy(e.to_string()))?;
        Ok(PrfKey(bytes))
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// Derives a labelled 32-byte subkey.
    pub fn derive(&self, label: &[u8]) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"subkey");
        h.update((label.len() as u64).to_le_bytes());
        h.update(label);
        h.update(self.0);
        h.finalize().into()
    }
}

/// Target set for sampled values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleRange {
    /// Uniform over `Z_p`, centered.
    FullField,
    /// Uniform over `[-rho, rho]`.
    CheckRange,
}

pub struct PrfStream {
    cipher: Aes128,
    domain_tag: Vec<u8>,
    counter: u64,
    words: [u32; 4],
    next_word: usize,
}

impl std::fmt::Debug for PrfStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PrfStream")
            .field("domain_tag", &String::from_utf8_lossy(&self.domain_tag))
            .field("counter", &self.counter)
            .finish()
    }
}

impl PrfStream {
    pub fn new(key: &PrfKey, domain_tag: &[u8]) -> Self {
        PrfStream::at(key, domain_tag, 0)
    }

    /// Resumes a stream at a block counter previously returned by
    /// [`PrfStream::counter`].
    pub fn at(key: &PrfKey, domain_tag: &[u8], counter: u64) -> Self {
        let mut label = b"prf-stream/".to_vec();
        label.extend_from_slice(domain_tag);
        let sub = key.derive(&label);
        let cipher = Aes128::new(GenericArray::from_slice(&sub[..16]));
        PrfStream {
            cipher,
            domain_tag: domain_tag.to_vec(),
            counter,
            words: [0; 4],
            next_word: 4,
        }
    }

    /// Index of the next unused 16-byte keystream block. Every tensor draw
    /// ends on a block boundary, so this is a complete resume point.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn domain_tag(&self) -> &[u8] {
        &self.domain_tag
    }

    fn refill(&mut self) {
        let mut block = [0u8; 16];
        block[..8].copy_from_slice(&self.counter.to_le_bytes());
        let mut ga = GenericArray::from(block);
        self.cipher.encrypt_block(&mut ga);
        for (i, w) in self.words.iter_mut().enumerate() {
            *w = u32::from_le_bytes([ga[4 * i], ga[4 * i + 1], ga[4 * i + 2], ga[4 * i + 3]]);
        }
        self.counter += 1;
        self.next_word = 0;
    }

    fn next_word(&mut self) -> u32 {
        if self.next_word == 4 {
            self.refill();
        }
        let w = self.words[self.next_word];
        self.next_word += 1;
        w
    }

    /// Uniform integer in `[0, n)` by rejection on the smallest covering
    /// power of two.
    fn uniform_below(&mut self, n: u32) -> u32 {
        debug_assert!(n >= 1);
        let mask = if n == 1 {
            0
        } else {
            u32::MAX >> (n - 1).leading_zeros()
        };
        loop {
            let v = self.next_word() & mask;
            if v < n {
                return v;
            }
        }
    }

    /// Draws `count` values and drops any partially used block.
    pub fn sample(&mut self, count: usize, range: SampleRange, params: &FieldParams) -> Vec<f64> {
        let mut out = Vec::with_capacity(count);
        match range {
            SampleRange::FullField => {
                let p = params.modulus();
                let half = (p - 1) / 2;
                for _ in 0..count {
                    let v = self.uniform_below(p);
                    out.push(if v > half {
                        f64::from(v) - f64::from(p)
                    } else {
                        f64::from(v)
                    });
                }
            }
            SampleRange::CheckRange => {
                let rho = params.check_range();
                let n = 2 * rho + 1;
                for _ in 0..count {
                    out.push(f64::from(self.uniform_below(n)) - f64::from(rho));
                }
            }
        }
        self.next_word = 4;
        out
    }

    pub fn field_tensor(
        &mut self,
        shape: Vec<usize>,
        range: SampleRange,
        params: &FieldParams,
    ) -> FieldTensor {
        let count = shape.iter().product();
        FieldTensor::from_reduced(shape, self.sample(count, range, params))
    }
}
