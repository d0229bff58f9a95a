use std::time::{Duration, Instant};

use crate::blinding::{blind, open, precompute_tape, unblind, BlindingTape, SealKey, TapeStore};
use crate::field::PrfKey;
use crate::kernels::{center, KernelError, LayerOps, OpCounter, UntrustedMode};
use crate::quantize::QuantizedModel;
use crate::quantize::{walk, LinearExecutor, QLinear, Tensor, TrustedExecutor};
use crate::verify::{
    check_online, check_preprocessed, precompute_secrets, CheckSource, FreivaldsSecret,
    SoundnessConfig, Verdict,
};

use super::{
    decode, encode, Adversary, Counters, ExecutorBoundary, LayerStatus, LayerVerdict, Mode,
    Request, RunReport, RuntimeError, Scheme, Strategy, Timings, Transcript, UntrustedExecutor,
    UntrustedHost,
};

/// One inference session: a certified model, check parameters, the trusted
/// master key and a run id. Sessions share nothing.
#[derive(Debug)]
pub struct Session<'m> {
    model: &'m QuantizedModel,
    cfg: SoundnessConfig,
    key: PrfKey,
    run_id: u64,
}

enum Check<'s> {
    None,
    Online { batch: usize, src: Box<CheckSource> },
    Preprocessed(&'s FreivaldsSecret),
}

enum Stop {
    Abort,
    Fatal(RuntimeError),
}

impl From<KernelError> for Stop {
    fn from(e: KernelError) -> Self {
        Stop::Fatal(e.into())
    }
}

impl<E: Into<RuntimeError>> From<(E,)> for Stop {
    fn from(e: (E,)) -> Self {
        Stop::Fatal(e.0.into())
    }
}

/// The trusted side of an outsourced run, driven by the model walker.
struct Outsource<'s, 'b> {
    session: &'s Session<'s>,
    boundary: ExecutorBoundary<'b>,
    mode: UntrustedMode,
    check: Check<'s>,
    tape: Option<(&'s BlindingTape, SealKey)>,
    trusted: OpCounter,
    verification: OpCounter,
    verdicts: Vec<LayerVerdict>,
    checks: usize,
    verify_time: Duration,
}

impl Outsource<'_, '_> {
    fn reject(&mut self, layer: usize, checks: usize, status: LayerStatus) -> Stop {
        self.verdicts.push(LayerVerdict {
            layer,
            checks,
            status,
        });
        Stop::Abort
    }

    /// Runs the layer's checks; `Err` carries the failing status.
    fn verify(&mut self, layer: &QLinear, xs: &[Vec<i64>], ys: &[Vec<i64>]) -> Result<usize, Stop> {
        let cfg = self.session.cfg;
        let start = Instant::now();
        let mut ops = LayerOps::default();
        let mut checks = 0;
        let mut failed = None;
        match &mut self.check {
            Check::None => {}
            Check::Online { batch, src } => {
                for (xc, yc) in xs.chunks(*batch).zip(ys.chunks(*batch)) {
                    let xr: Vec<&[i64]> = xc.iter().map(Vec::as_slice).collect();
                    let yr: Vec<&[i64]> = yc.iter().map(Vec::as_slice).collect();
                    let out = check_online(layer, &xr, &yr, &cfg, src).map_err(|e| (e,))?;
                    ops += out.ops;
                    checks += 1;
                    if let Verdict::Reject { repetition } = out.verdict {
                        failed = Some(repetition);
                        break;
                    }
                }
            }
            Check::Preprocessed(secret) => {
                for (x, y) in xs.iter().zip(ys) {
                    let out =
                        check_preprocessed(x, y, secret, layer.index, &cfg).map_err(|e| (e,))?;
                    ops += out.ops;
                    checks += 1;
                    if let Verdict::Reject { repetition } = out.verdict {
                        failed = Some(repetition);
                        break;
                    }
                }
            }
        }
        self.verify_time += start.elapsed();
        self.verification.record(layer.index, ops);
        self.checks += checks;
        match failed {
            Some(repetition) => {
                Err(self.reject(layer.index, checks, LayerStatus::Rejected { repetition }))
            }
            None => Ok(checks),
        }
    }
}

impl LinearExecutor for Outsource<'_, '_> {
    type Error = Stop;

    fn linear(&mut self, layer: &QLinear, xs: &[Vec<i64>]) -> Result<Vec<Vec<i64>>, Stop> {
        let params = *self.session.model.scheme.params();
        let m = i64::from(params.modulus());
        let (n_in, n_out) = (layer.op.input_len(), layer.op.output_len());
        let mut trusted = LayerOps::default();

        let mut masks = None;
        let payload: Vec<i64> = match &self.tape {
            Some((tape, _)) => {
                if xs.len() != 1 {
                    return Err((RuntimeError::Unsupported(
                        "a blinding mask covers exactly one input".into(),
                    ),)
                        .into());
                }
                let rec = tape.claim(layer.index).map_err(|e| (e,))?;
                if rec.input_len != n_in || rec.output_len != n_out {
                    return Err((RuntimeError::Unsupported(format!(
                        "tape record for layer {} has the wrong shape",
                        layer.index
                    )),)
                        .into());
                }
                let r = tape.mask(&self.session.key, rec, &params);
                let xb = blind(&xs[0], &r, &params).map_err(|e| (e,))?;
                trusted.additions += n_in as u64;
                masks = Some(rec);
                xb
            }
            None => xs.concat(),
        };

        let reply = self.boundary.call(Request {
            layer: layer.index,
            mode: self.mode,
            batch: xs.len(),
            payload: encode(&payload),
        });
        let Some(flat) = decode(&reply).filter(|v| v.len() == xs.len() * n_out) else {
            return Err(self.reject(layer.index, 0, LayerStatus::Malformed));
        };
        let mut ys: Vec<Vec<i64>> = flat
            .chunks(n_out)
            .map(|c| c.iter().map(|&v| center(v, m)).collect())
            .collect();

        if let (Some((tape, seal_key)), Some(_)) = (&self.tape, masks) {
            let run = tape.run_id();
            let u = self
                .boundary
                .fetch_blob(run, layer.index)
                .and_then(|b| open(&b, seal_key, run, layer.index).ok());
            let Some(u) = u.filter(|u| u.len() == n_out) else {
                return Err(self.reject(layer.index, 0, LayerStatus::AuthFailure));
            };
            ys[0] = unblind(&ys[0], &u, &params).map_err(|e| (e,))?;
            trusted.additions += n_out as u64;
        }

        let checks = self.verify(layer, xs, &ys)?;
        self.verdicts.push(LayerVerdict {
            layer: layer.index,
            checks,
            status: LayerStatus::Accepted,
        });

        let c = layer.bias.len();
        for y in &mut ys {
            for (i, v) in y.iter_mut().enumerate() {
                *v = center(*v + layer.bias[i % c], m);
            }
            trusted.additions += y.len() as u64;
        }
        self.trusted.record(layer.index, trusted);
        Ok(ys)
    }
}

impl<'m> Session<'m> {
    /// Fails unless the model carries a passing range certificate and the
    /// check field uses the model's modulus.
    pub fn new(
        model: &'m QuantizedModel,
        cfg: SoundnessConfig,
        key: PrfKey,
        run_id: u64,
    ) -> Result<Self, RuntimeError> {
        if !model.is_certified() {
            return Err(RuntimeError::NotCertified);
        }
        let (check, mdl) = (cfg.field().modulus(), model.scheme.params().modulus());
        if check != mdl {
            return Err(RuntimeError::FieldMismatch { check, model: mdl });
        }
        Ok(Session {
            model,
            cfg,
            key,
            run_id,
        })
    }

    pub fn run_id(&self) -> u64 {
        self.run_id
    }

    pub fn config(&self) -> &SoundnessConfig {
        &self.cfg
    }

    fn base_report(&self, mode: Mode, batch: usize) -> RunReport {
        RunReport {
            model: self.model.name.clone(),
            mode,
            run_id: self.run_id,
            batch,
            outputs: None,
            verdicts: Vec::new(),
            counters: Counters::default(),
            transcript_bytes: 0,
            storage_bytes: 0,
            checks: 0,
            soundness_bound: None,
            timings: Timings::default(),
            transcript: Transcript::default(),
        }
    }

    fn input_tensor(&self, xs: &[Vec<i64>]) -> Result<Tensor, RuntimeError> {
        if xs.is_empty() {
            return Err(RuntimeError::EmptyBatch);
        }
        let need = self.model.input_len();
        if let Some(x) = xs.iter().find(|x| x.len() != need) {
            return Err(crate::quantize::QuantError::InputShape {
                expected: need,
                actual: x.len(),
            }
            .into());
        }
        Ok(Tensor::batch(xs.to_vec(), self.model.input_shape.clone()))
    }

    /// All-trusted inference with the exact kernels.
    pub fn run_baseline(&self, xs: &[Vec<i64>]) -> Result<RunReport, RuntimeError> {
        let input = self.input_tensor(xs)?;
        let start = Instant::now();
        let mut exec = TrustedExecutor::new(*self.model.scheme.params(), OpCounter::new());
        let out = walk(&self.model.layers, input, &self.model.scheme, &mut exec)?
            .into_single(&self.model.scheme);
        let mut report = self.base_report(Mode::Baseline, xs.len());
        report.timings.online = start.elapsed().as_secs_f64();
        report.verdicts = self
            .model
            .linear_layers()
            .iter()
            .map(|l| LayerVerdict {
                layer: l.index,
                checks: 0,
                status: LayerStatus::Accepted,
            })
            .collect();
        report.counters.trusted = exec.counter;
        report.outputs = Some(out.rows);
        Ok(report)
    }

    /// Offline phase for preprocessed checks.
    pub fn prepare_secret(&self) -> Result<(FreivaldsSecret, OpCounter), RuntimeError> {
        let (s, ops) = precompute_secrets(self.model, &self.cfg, &self.key, self.run_id)?;
        let mut c = OpCounter::new();
        c.record(usize::MAX, ops);
        Ok((s, c))
    }

    /// Offline phase for private runs; sealed blobs go to `store`.
    pub fn prepare_tape(
        &self,
        store: &mut TapeStore,
    ) -> Result<(BlindingTape, OpCounter), RuntimeError> {
        let (t, ops) = precompute_tape(self.model, &self.key, self.run_id, store)?;
        let mut c = OpCounter::new();
        c.record(usize::MAX, ops);
        Ok((t, c))
    }

    fn outsource(
        &self,
        mode: Mode,
        xs: &[Vec<i64>],
        check: Check<'_>,
        tape: Option<&BlindingTape>,
        remote: &mut dyn UntrustedExecutor,
    ) -> Result<RunReport, RuntimeError> {
        let input = self.input_tensor(xs)?;
        let untrusted_before = remote.counter().clone();
        let start = Instant::now();
        let verifying = !matches!(check, Check::None);
        let mut exec = Outsource {
            session: self,
            boundary: ExecutorBoundary::new(remote),
            mode: if tape.is_some() {
                UntrustedMode::BlindedF64
            } else {
                UntrustedMode::UnblindedF32
            },
            check,
            tape: tape.map(|t| (t, SealKey::derive(&self.key))),
            trusted: OpCounter::new(),
            verification: OpCounter::new(),
            verdicts: Vec::new(),
            checks: 0,
            verify_time: Duration::ZERO,
        };
        let result = walk(&self.model.layers, input, &self.model.scheme, &mut exec);
        let elapsed = start.elapsed().as_secs_f64();
        let mut report = self.base_report(mode, xs.len());
        report.outputs = match result {
            Ok(t) => Some(t.into_single(&self.model.scheme).rows),
            Err(Stop::Abort) => None,
            Err(Stop::Fatal(e)) => return Err(e),
        };
        let mut untrusted = exec.boundary.untrusted_counter();
        for (l, ops) in &untrusted_before.per_layer {
            let e = untrusted.per_layer.entry(*l).or_default();
            e.multiplications -= ops.multiplications;
            e.additions -= ops.additions;
        }
        untrusted.multiplications -= untrusted_before.multiplications;
        untrusted.additions -= untrusted_before.additions;
        let transcript = exec.boundary.into_transcript();
        report.transcript_bytes = transcript.message_bytes();
        report.storage_bytes = transcript.storage_bytes();
        report.transcript = transcript;
        report.verdicts = exec.verdicts;
        report.checks = exec.checks;
        report.soundness_bound = verifying.then(|| self.cfg.run_bound(exec.checks));
        report.counters = Counters {
            trusted: exec.trusted,
            verification: exec.verification,
            untrusted,
            preprocessing: OpCounter::new(),
        };
        report.timings.online = elapsed;
        report.timings.verification = exec.verify_time.as_secs_f64();
        Ok(report)
    }

    /// Integrity-only outsourcing of a batch.
    pub fn run_verified(
        &self,
        xs: &[Vec<i64>],
        scheme: Scheme,
        secret: Option<&FreivaldsSecret>,
        remote: &mut dyn UntrustedExecutor,
    ) -> Result<RunReport, RuntimeError> {
        let (mode, check) = match scheme {
            Scheme::Plain => (
                Mode::VerifyPlain,
                Check::Online {
                    batch: 1,
                    src: Box::new(self.online_source()),
                },
            ),
            Scheme::Batched(0) => {
                return Err(RuntimeError::Unsupported(
                    "batch size must be at least 1".into(),
                ))
            }
            Scheme::Batched(b) => (
                Mode::VerifyBatched,
                Check::Online {
                    batch: b,
                    src: Box::new(self.online_source()),
                },
            ),
            Scheme::Preprocessed => (
                Mode::VerifyPreproc,
                Check::Preprocessed(self.checked_secret(secret)?),
            ),
        };
        self.outsource(mode, xs, check, None, remote)
    }

    /// Blinded outsourcing of one input. With `verify`, every unblinded
    /// output is checked against `secret`.
    pub fn run_private(
        &self,
        x: &[i64],
        tape: &BlindingTape,
        secret: Option<&FreivaldsSecret>,
        remote: &mut dyn UntrustedExecutor,
        verify: bool,
    ) -> Result<RunReport, RuntimeError> {
        if tape.run_id() != self.run_id {
            return Err(RuntimeError::RunMismatch {
                what: "blinding tape",
                expected: self.run_id,
                found: tape.run_id(),
            });
        }
        let (mode, check) = if verify {
            (
                Mode::PrivateVerify,
                Check::Preprocessed(self.checked_secret(secret)?),
            )
        } else {
            (Mode::Private, Check::None)
        };
        self.outsource(mode, &[x.to_vec()], check, Some(tape), remote)
    }

    fn online_source(&self) -> CheckSource {
        CheckSource::for_run(&self.key, self.run_id, *self.cfg.field())
    }

    fn checked_secret<'s>(
        &self,
        secret: Option<&'s FreivaldsSecret>,
    ) -> Result<&'s FreivaldsSecret, RuntimeError> {
        let s = secret.ok_or(RuntimeError::MissingSecret)?;
        if s.run_id() != self.run_id {
            return Err(RuntimeError::RunMismatch {
                what: "check secret",
                expected: self.run_id,
                found: s.run_id(),
            });
        }
        Ok(s)
    }

    /// Both phases of `mode` against an untrusted host playing `strategy`.
    /// `batch` only matters for [`Mode::VerifyBatched`]; private modes take
    /// one input.
    pub fn run(
        &self,
        mode: Mode,
        xs: &[Vec<i64>],
        batch: usize,
        strategy: Strategy,
        seed: u64,
    ) -> Result<RunReport, RuntimeError> {
        if mode == Mode::Baseline {
            return self.run_baseline(xs);
        }
        let mut store = TapeStore::new();
        let mut pre = OpCounter::new();
        let start = Instant::now();
        let secret = match mode {
            Mode::VerifyPreproc | Mode::PrivateVerify => {
                let (s, c) = self.prepare_secret()?;
                pre.merge(&c);
                Some(s)
            }
            _ => None,
        };
        let tape = if mode.is_private() {
            if xs.len() != 1 {
                return Err(RuntimeError::Unsupported(format!(
                    "{mode} runs one input per tape, got {}",
                    xs.len()
                )));
            }
            let (t, c) = self.prepare_tape(&mut store)?;
            pre.merge(&c);
            Some(t)
        } else {
            None
        };
        let pre_time = start.elapsed().as_secs_f64();
        let host = UntrustedHost::new(self.model).with_store(store);
        let mut adv = Adversary::new(self.model, host, strategy, seed);
        let mut report = match (mode, &tape) {
            (Mode::VerifyPlain, _) => self.run_verified(xs, Scheme::Plain, None, &mut adv)?,
            (Mode::VerifyBatched, _) => {
                self.run_verified(xs, Scheme::Batched(batch), None, &mut adv)?
            }
            (Mode::VerifyPreproc, _) => {
                self.run_verified(xs, Scheme::Preprocessed, secret.as_ref(), &mut adv)?
            }
            (Mode::Private, Some(t)) => self.run_private(&xs[0], t, None, &mut adv, false)?,
            (Mode::PrivateVerify, Some(t)) => {
                self.run_private(&xs[0], t, secret.as_ref(), &mut adv, true)?
            }
            _ => unreachable!("baseline handled above, private modes have a tape"),
        };
        report.counters.preprocessing = pre;
        report.timings.preprocessing = pre_time;
        Ok(report)
    }
}
