use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blinding::TapeStore;
use crate::field::FieldParams;
use crate::kernels::{untrusted_forward, LayerOps, OpCounter, UntrustedMode, UntrustedWeights};
use crate::model::LinearOp;
use crate::quantize::QuantizedModel;
use crate::verify::Tamper;

/// Bytes per tensor element on the wire.
pub const ELEMENT_BYTES: usize = 4;

/// Centered residues as 4-byte little-endian two's-complement integers.
pub fn encode(values: &[i64]) -> Vec<u8> {
    values
        .iter()
        .flat_map(|&v| (v as i32).to_le_bytes())
        .collect()
}

/// Inverse of [`encode`]; `None` if the length is not a multiple of 4.
pub fn decode(bytes: &[u8]) -> Option<Vec<i64>> {
    if !bytes.len().is_multiple_of(ELEMENT_BYTES) {
        return None;
    }
    Some(
        bytes
            .chunks_exact(4)
            .map(|c| i64::from(i32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect(),
    )
}

/// Trusted to untrusted: evaluate linear layer `layer` on a batch of
/// `batch` concatenated inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub layer: usize,
    pub mode: UntrustedMode,
    pub batch: usize,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub layer: usize,
    pub payload: Vec<u8>,
}

/// The untrusted party as the trusted side sees it: ordered request /
/// response pairs plus reads from the untrusted tape store.
pub trait UntrustedExecutor {
    fn handle(&mut self, request: &Request) -> Response;

    fn fetch_blob(&mut self, run_id: u64, layer: usize) -> Option<Vec<u8>>;

    /// Work done so far on the untrusted side.
    fn counter(&self) -> &OpCounter;
}

/// The honest untrusted executor: holds the public weights and the sealed
/// tape blobs, never any key.
#[derive(Debug, Clone)]
pub struct UntrustedHost {
    layers: BTreeMap<usize, (LinearOp, UntrustedWeights)>,
    params: FieldParams,
    store: TapeStore,
    counter: OpCounter,
}

impl UntrustedHost {
    pub fn new(model: &QuantizedModel) -> Self {
        let layers = model
            .linear_layers()
            .into_iter()
            .map(|l| (l.index, (l.op, UntrustedWeights::new(&l.weight))))
            .collect();
        UntrustedHost {
            layers,
            params: *model.scheme.params(),
            store: TapeStore::new(),
            counter: OpCounter::new(),
        }
    }

    pub fn with_store(mut self, store: TapeStore) -> Self {
        self.store = store;
        self
    }

    pub fn store(&self) -> &TapeStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut TapeStore {
        &mut self.store
    }

    /// Output for a well-formed request; malformed ones get an empty reply.
    fn compute(&mut self, req: &Request) -> Vec<i64> {
        let Some((op, w)) = self.layers.get(&req.layer) else {
            return Vec::new();
        };
        let Some(xs) = decode(&req.payload) else {
            return Vec::new();
        };
        if req.batch == 0 || xs.len() != req.batch * op.input_len() {
            return Vec::new();
        }
        let mut ops = LayerOps::default();
        let mut out = Vec::with_capacity(req.batch * op.output_len());
        for x in xs.chunks(op.input_len()) {
            let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
            match untrusted_forward(op, &xf, w, req.mode, &self.params, &mut ops) {
                Ok(y) => out.extend(y.into_iter().map(|v| v as i64)),
                Err(_) => return Vec::new(),
            }
        }
        self.counter.record(req.layer, ops);
        out
    }
}

impl UntrustedExecutor for UntrustedHost {
    fn handle(&mut self, request: &Request) -> Response {
        Response {
            layer: request.layer,
            payload: encode(&self.compute(request)),
        }
    }

    fn fetch_blob(&mut self, run_id: u64, layer: usize) -> Option<Vec<u8>> {
        self.store.get(run_id, layer).map(<[u8]>::to_vec)
    }

    fn counter(&self) -> &OpCounter {
        &self.counter
    }
}

/// Cheating strategies for the untrusted side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Strategy {
    Honest,
    TamperEntry {
        layer: usize,
        index: usize,
        delta: i64,
    },
    /// A random nonzero change to one random entry, on `layer` or, if
    /// `None`, on every layer.
    TamperRandom {
        layer: Option<usize>,
    },
    ScaleLayer {
        layer: usize,
        factor: i64,
    },
    ReplaceLayer {
        layer: usize,
    },
    /// Flips a bit of the sealed unblinding factor for `layer`.
    CorruptTape {
        layer: usize,
    },
}

impl Strategy {
    fn tamper_for(&self, layer: usize) -> Option<Tamper> {
        match *self {
            Strategy::TamperEntry {
                layer: l,
                index,
                delta,
            } if l == layer => Some(Tamper::Entry { index, delta }),
            Strategy::TamperRandom { layer: l } if l.is_none_or(|l| l == layer) => {
                Some(Tamper::RandomEntry)
            }
            Strategy::ScaleLayer { layer: l, factor } if l == layer => {
                Some(Tamper::Scale { factor })
            }
            Strategy::ReplaceLayer { layer: l } if l == layer => Some(Tamper::Replace),
            _ => None,
        }
    }
}

/// An untrusted host under adversarial control. It sees exactly what the
/// host sees and can only rewrite what it sends back.
#[derive(Debug, Clone)]
pub struct Adversary {
    host: UntrustedHost,
    strategy: Strategy,
    rng: ChaCha8Rng,
    row_lens: BTreeMap<usize, usize>,
}

impl Adversary {
    pub fn new(model: &QuantizedModel, host: UntrustedHost, strategy: Strategy, seed: u64) -> Self {
        let row_lens = model
            .linear_layers()
            .into_iter()
            .map(|l| (l.index, l.op.bias_len()))
            .collect();
        Adversary {
            host,
            strategy,
            rng: ChaCha8Rng::seed_from_u64(seed),
            row_lens,
        }
    }

    pub fn honest(model: &QuantizedModel) -> Self {
        Adversary::new(model, UntrustedHost::new(model), Strategy::Honest, 0)
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn host(&self) -> &UntrustedHost {
        &self.host
    }

    pub fn host_mut(&mut self) -> &mut UntrustedHost {
        &mut self.host
    }
}

impl UntrustedExecutor for Adversary {
    fn handle(&mut self, request: &Request) -> Response {
        let mut resp = self.host.handle(request);
        if let Some(t) = self.strategy.tamper_for(request.layer) {
            if let Some(mut y) = decode(&resp.payload) {
                let row = self.row_lens.get(&request.layer).copied().unwrap_or(1);
                t.apply(&mut y, row, &mut self.rng, &self.host.params);
                resp.payload = encode(&y);
            }
        }
        resp
    }

    fn fetch_blob(&mut self, run_id: u64, layer: usize) -> Option<Vec<u8>> {
        let mut blob = self.host.fetch_blob(run_id, layer)?;
        if matches!(self.strategy, Strategy::CorruptTape { layer: l } if l == layer) {
            let mid = blob.len() / 2;
            blob[mid] ^= 1;
        }
        Some(blob)
    }

    fn counter(&self) -> &OpCounter {
        self.host.counter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Request,
    Response,
    /// A sealed tape blob read from untrusted storage.
    StoreRead,
}

/// One logged message. The decoded payload is kept for audits but not
/// serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub direction: Direction,
    pub layer: usize,
    pub mode: UntrustedMode,
    pub bytes: usize,
    /// Hex SHA-256 of the raw message bytes.
    pub digest: String,
    #[serde(skip)]
    pub payload: Vec<u8>,
}

impl TranscriptEntry {
    fn new(direction: Direction, layer: usize, mode: UntrustedMode, payload: &[u8]) -> Self {
        TranscriptEntry {
            direction,
            layer,
            mode,
            bytes: payload.len(),
            digest: hex::encode(Sha256::digest(payload)),
            payload: payload.to_vec(),
        }
    }
}

/// The channel between the two executors. Messages are plain bytes; every
/// one is logged.
pub struct ExecutorBoundary<'a> {
    remote: &'a mut dyn UntrustedExecutor,
    messages: Vec<TranscriptEntry>,
    storage: Vec<TranscriptEntry>,
}

impl<'a> ExecutorBoundary<'a> {
    pub fn new(remote: &'a mut dyn UntrustedExecutor) -> Self {
        ExecutorBoundary {
            remote,
            messages: Vec::new(),
            storage: Vec::new(),
        }
    }

    /// Sends a request and returns the raw response payload.
    pub fn call(&mut self, request: Request) -> Vec<u8> {
        self.messages.push(TranscriptEntry::new(
            Direction::Request,
            request.layer,
            request.mode,
            &request.payload,
        ));
        let resp = self.remote.handle(&request);
        self.messages.push(TranscriptEntry::new(
            Direction::Response,
            resp.layer,
            request.mode,
            &resp.payload,
        ));
        resp.payload
    }

    pub fn fetch_blob(&mut self, run_id: u64, layer: usize) -> Option<Vec<u8>> {
        let blob = self.remote.fetch_blob(run_id, layer)?;
        self.storage.push(TranscriptEntry::new(
            Direction::StoreRead,
            layer,
            UntrustedMode::BlindedF64,
            &blob,
        ));
        Some(blob)
    }

    pub fn untrusted_counter(&self) -> OpCounter {
        self.remote.counter().clone()
    }

    pub fn into_transcript(self) -> Transcript {
        Transcript {
            messages: self.messages,
            storage: self.storage,
        }
    }
}

/// Everything that crossed the boundary during one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub messages: Vec<TranscriptEntry>,
    pub storage: Vec<TranscriptEntry>,
}

impl Transcript {
    /// Request and response bytes; storage reads excluded.
    pub fn message_bytes(&self) -> usize {
        self.messages.iter().map(|m| m.bytes).sum()
    }

    pub fn storage_bytes(&self) -> usize {
        self.storage.iter().map(|m| m.bytes).sum()
    }

    pub fn requested_layers(&self) -> Vec<usize> {
        self.messages
            .iter()
            .filter(|m| m.direction == Direction::Request)
            .map(|m| m.layer)
            .collect()
    }

    /// JSON lines, messages first, then storage reads.
    pub fn to_jsonl(&self) -> String {
        self.messages
            .iter()
            .chain(&self.storage)
            .map(|m| serde_json::to_string(m).expect("plain struct serializes") + "\n")
            .collect()
    }
}
