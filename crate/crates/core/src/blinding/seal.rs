//! Authenticated storage of unblinding factors.
//!
//! Blob layout, all integers little-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 8    | run id (`u64`)                          |
//! | 8      | 4    | linear layer index (`u32`)              |
//! | 12     | 12   | AES-GCM nonce: run id `u64` ++ layer `u32` |
//! | 24     | 4n   | ciphertext of `u` as centered `i32`s     |
//! | 24+4n  | 16   | GCM tag                                 |
//!
//! The 24-byte header is the associated data, so a blob moved to another
//! run or layer slot fails to open.

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Key, Nonce};

use crate::field::PrfKey;

use super::BlindingError;

pub const HEADER_LEN: usize = 24;
pub const TAG_LEN: usize = 16;

/// AES-256-GCM key for sealing, derived from the trusted master key.
#[derive(Clone)]
pub struct SealKey(Aes256Gcm);

impl std::fmt::Debug for SealKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SealKey(..)")
    }
}

impl SealKey {
    pub fn derive(master: &PrfKey) -> Self {
        let k = master.derive(b"tape-seal");
        SealKey(Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(&k)))
    }
}

fn header(run_id: u64, layer: usize) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..8].copy_from_slice(&run_id.to_le_bytes());
    h[8..12].copy_from_slice(&(layer as u32).to_le_bytes());
    h[12..20].copy_from_slice(&run_id.to_le_bytes());
    h[20..24].copy_from_slice(&(layer as u32).to_le_bytes());
    h
}

/// Sealed size of an `n`-element factor.
pub fn sealed_len(n: usize) -> usize {
    HEADER_LEN + 4 * n + TAG_LEN
}

pub fn seal(u: &[i64], key: &SealKey, run_id: u64, layer: usize) -> Vec<u8> {
    let h = header(run_id, layer);
    let msg: Vec<u8> = u.iter().flat_map(|&v| (v as i32).to_le_bytes()).collect();
    let ct = key
        .0
        .encrypt(Nonce::from_slice(&h[12..]), Payload { msg: &msg, aad: &h })
        .expect("GCM encryption of an in-memory buffer");
    let mut out = h.to_vec();
    out.extend_from_slice(&ct);
    out
}

/// Authenticates and decrypts a blob that must belong to `(run_id, layer)`.
pub fn open(
    blob: &[u8],
    key: &SealKey,
    run_id: u64,
    layer: usize,
) -> Result<Vec<i64>, BlindingError> {
    let fail = || BlindingError::AuthFailure { layer };
    if blob.len() < HEADER_LEN + TAG_LEN || !(blob.len() - HEADER_LEN - TAG_LEN).is_multiple_of(4) {
        return Err(fail());
    }
    let h = header(run_id, layer);
    if blob[..HEADER_LEN] != h {
        return Err(fail());
    }
    let msg = key
        .0
        .decrypt(
            Nonce::from_slice(&h[12..]),
            Payload {
                msg: &blob[HEADER_LEN..],
                aad: &h,
            },
        )
        .map_err(|_| fail())?;
    Ok(msg
        .chunks_exact(4)
        .map(|c| i64::from(i32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_tamper_detection() {
        let key = SealKey::derive(&PrfKey::from_seed(1));
        let u = vec![0, -1, 8_388_606, -8_388_606, 42];
        let blob = seal(&u, &key, 9, 3);
        assert_eq!(blob.len(), sealed_len(u.len()));
        assert_eq!(open(&blob, &key, 9, 3).unwrap(), u);

        for i in [0, 13, HEADER_LEN + 2, blob.len() - 1] {
            let mut bad = blob.clone();
            bad[i] ^= 0x10;
            assert_eq!(
                open(&bad, &key, 9, 3),
                Err(BlindingError::AuthFailure { layer: 3 })
            );
        }
        let other = SealKey::derive(&PrfKey::from_seed(2));
        assert!(open(&blob, &other, 9, 3).is_err());
        assert!(open(&blob, &key, 9, 4).is_err());
        assert!(open(&blob, &key, 10, 3).is_err());
    }
}
