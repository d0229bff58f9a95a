//! One-time blinding of outsourced linear layers.
//!
//! For a run, every linear layer `i` gets a mask `r_i`, uniform over
//! `Z_p^{|x_i|}` and drawn from the keyed stream `blind/<run id>`, and an
//! unblinding factor `u_i = r_i W_i` (bias-free). The trusted side keeps only
//! the stream counter each `r_i` starts at; the factors are sealed and handed
//! to the untrusted [`TapeStore`].

mod seal;

pub use seal::{open, seal, sealed_len, SealKey, HEADER_LEN, TAG_LEN};

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};

use thiserror::Error;

use crate::field::{FieldParams, PrfKey, PrfStream, SampleRange};
use crate::kernels::{center, expect_len, linear_forward, KernelError, LayerOps};
use crate::quantize::QuantizedModel;

const TAPE_MAGIC: &[u8; 8] = b"SLMTAPE\x01";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BlindingError {
    #[error("tape record for linear layer {layer} was already used")]
    TapeReuse { layer: usize },
    #[error("tape has no record for linear layer {layer}")]
    MissingRecord { layer: usize },
    #[error("sealed unblinding factor for linear layer {layer} failed authentication")]
    AuthFailure { layer: usize },
    #[error("malformed tape file: {0}")]
    Format(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Where `r_i` lives in the blinding stream.
#[derive(Debug)]
pub struct TapeRecord {
    pub layer: usize,
    /// Block counter at which `r_i` starts.
    pub anchor: u64,
    pub input_len: usize,
    pub output_len: usize,
    used: AtomicBool,
}

impl TapeRecord {
    pub fn is_used(&self) -> bool {
        self.used.load(Ordering::Acquire)
    }
}

/// The trusted half of one run's blinding material.
#[derive(Debug)]
pub struct BlindingTape {
    run_id: u64,
    records: Vec<TapeRecord>,
}

fn stream_tag(run_id: u64) -> String {
    format!("blind/{run_id}")
}

impl BlindingTape {
    pub fn run_id(&self) -> u64 {
        self.run_id
    }

    pub fn records(&self) -> &[TapeRecord] {
        &self.records
    }

    /// Unused records.
    pub fn remaining(&self) -> usize {
        self.records.iter().filter(|r| !r.is_used()).count()
    }

    /// `sum_i |y_i|`: elements of sealed plaintext for this run.
    pub fn plaintext_elements(&self) -> usize {
        self.records.iter().map(|r| r.output_len).sum()
    }

    /// Marks the record for `layer` used. Fails if it already was.
    pub fn claim(&self, layer: usize) -> Result<&TapeRecord, BlindingError> {
        let rec = self
            .records
            .iter()
            .find(|r| r.layer == layer)
            .ok_or(BlindingError::MissingRecord { layer })?;
        if rec.used.swap(true, Ordering::AcqRel) {
            return Err(BlindingError::TapeReuse { layer });
        }
        Ok(rec)
    }

    /// Recomputes `r_i` for a record from the key.
    pub fn mask(&self, key: &PrfKey, record: &TapeRecord, params: &FieldParams) -> Vec<i64> {
        let mut s = PrfStream::at(key, stream_tag(self.run_id).as_bytes(), record.anchor);
        s.sample(record.input_len, SampleRange::FullField, params)
            .into_iter()
            .map(|v| v as i64)
            .collect()
    }
}

/// Sealed blobs kept by the untrusted executor, keyed by (run, layer).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TapeStore {
    blobs: BTreeMap<(u64, usize), Vec<u8>>,
}

impl TapeStore {
    pub fn new() -> Self {
        TapeStore::default()
    }

    pub fn put(&mut self, run_id: u64, layer: usize, blob: Vec<u8>) {
        self.blobs.insert((run_id, layer), blob);
    }

    pub fn get(&self, run_id: u64, layer: usize) -> Option<&[u8]> {
        self.blobs.get(&(run_id, layer)).map(Vec::as_slice)
    }

    /// Mutable access, for storage-corrupting adversaries.
    pub fn get_mut(&mut self, run_id: u64, layer: usize) -> Option<&mut Vec<u8>> {
        self.blobs.get_mut(&(run_id, layer))
    }

    pub fn remove_run(&mut self, run_id: u64) {
        self.blobs.retain(|k, _| k.0 != run_id);
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    pub fn bytes(&self) -> usize {
        self.blobs.values().map(Vec::len).sum()
    }
}

/// Offline phase for one run: draws every `r_i`, computes `u_i = r_i W_i`
/// with the exact trusted kernel and seals it into `store`.
pub fn precompute_tape(
    model: &QuantizedModel,
    key: &PrfKey,
    run_id: u64,
    store: &mut TapeStore,
) -> Result<(BlindingTape, LayerOps), BlindingError> {
    let params = model.scheme.params();
    let seal_key = SealKey::derive(key);
    let mut stream = PrfStream::new(key, stream_tag(run_id).as_bytes());
    let mut ops = LayerOps::default();
    let mut records = Vec::new();
    for l in model.linear_layers() {
        let anchor = stream.counter();
        let r: Vec<i64> = stream
            .sample(l.op.input_len(), SampleRange::FullField, params)
            .into_iter()
            .map(|v| v as i64)
            .collect();
        let u = linear_forward(&l.op, &r, &l.weight, None, params, &mut ops)?;
        store.put(run_id, l.index, seal(&u, &seal_key, run_id, l.index));
        records.push(TapeRecord {
            layer: l.index,
            anchor,
            input_len: l.op.input_len(),
            output_len: l.op.output_len(),
            used: AtomicBool::new(false),
        });
    }
    Ok((BlindingTape { run_id, records }, ops))
}

/// `x~ = x + r` over `Z_p`.
pub fn blind(x: &[i64], r: &[i64], params: &FieldParams) -> Result<Vec<i64>, BlindingError> {
    expect_len("mask", r.len(), x.len())?;
    let m = i64::from(params.modulus());
    Ok(x.iter().zip(r).map(|(a, b)| center(a + b, m)).collect())
}

/// `y = y~ - u` over `Z_p`.
pub fn unblind(
    y_blind: &[i64],
    u: &[i64],
    params: &FieldParams,
) -> Result<Vec<i64>, BlindingError> {
    expect_len("unblinding factor", u.len(), y_blind.len())?;
    let m = i64::from(params.modulus());
    Ok(y_blind
        .iter()
        .zip(u)
        .map(|(a, b)| center(a - b, m))
        .collect())
}

/// Serializes a fresh tape and its sealed blobs into one file.
///
/// Layout (little-endian): magic `SLMTAPE\x01`, run id `u64`, record count
/// `u32`, then per record: layer `u32`, anchor `u64`, input length `u32`,
/// output length `u32`, blob length `u32`, blob bytes.
pub fn write_tape(tape: &BlindingTape, store: &TapeStore) -> Result<Vec<u8>, BlindingError> {
    let mut out = TAPE_MAGIC.to_vec();
    out.extend_from_slice(&tape.run_id.to_le_bytes());
    out.extend_from_slice(&(tape.records.len() as u32).to_le_bytes());
    for r in &tape.records {
        if r.is_used() {
            return Err(BlindingError::TapeReuse { layer: r.layer });
        }
        let blob = store
            .get(tape.run_id, r.layer)
            .ok_or(BlindingError::MissingRecord { layer: r.layer })?;
        out.extend_from_slice(&(r.layer as u32).to_le_bytes());
        out.extend_from_slice(&r.anchor.to_le_bytes());
        out.extend_from_slice(&(r.input_len as u32).to_le_bytes());
        out.extend_from_slice(&(r.output_len as u32).to_le_bytes());
        out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
        out.extend_from_slice(blob);
    }
    Ok(out)
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], BlindingError> {
        if self.0.len() < n {
            return Err(BlindingError::Format("truncated".into()));
        }
        let (a, b) = self.0.split_at(n);
        self.0 = b;
        Ok(a)
    }

    fn u32(&mut self) -> Result<u32, BlindingError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, BlindingError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

/// Parses [`write_tape`] output back into the trusted tape and the
/// untrusted store contents.
pub fn read_tape(bytes: &[u8]) -> Result<(BlindingTape, TapeStore), BlindingError> {
    let mut rd = Reader(bytes);
    if rd.take(8)? != TAPE_MAGIC {
        return Err(BlindingError::Format("bad magic".into()));
    }
    let run_id = rd.u64()?;
    let count = rd.u32()?;
    let mut store = TapeStore::new();
    let mut records = Vec::new();
    for _ in 0..count {
        let layer = rd.u32()? as usize;
        let anchor = rd.u64()?;
        let input_len = rd.u32()? as usize;
        let output_len = rd.u32()? as usize;
        let blob_len = rd.u32()? as usize;
        if blob_len != sealed_len(output_len) {
            return Err(BlindingError::Format(format!(
                "layer {layer}: blob of {blob_len} bytes for {output_len} elements"
            )));
        }
        store.put(run_id, layer, rd.take(blob_len)?.to_vec());
        records.push(TapeRecord {
            layer,
            anchor,
            input_len,
            output_len,
            used: AtomicBool::new(false),
        });
    }
    if !rd.0.is_empty() {
        return Err(BlindingError::Format(format!(
            "{} trailing bytes",
            rd.0.len()
        )));
    }
    Ok((BlindingTape { run_id, records }, store))
}
