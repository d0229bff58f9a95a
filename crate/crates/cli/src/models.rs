use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slalom_core::blinding::{read_tape, write_tape, TapeStore};
use slalom_core::model::{load_model, make_preset, save_model, ModelGraph, Preset};
use slalom_core::quantize::{QuantScheme, QuantizedModel};
use slalom_core::runtime::{Adversary, Mode, RunReport, Scheme, Session, UntrustedHost};
use slalom_core::verify::SoundnessConfig;

use crate::{CliError, Settings};

/// Range-check probes drawn for every model the CLI loads.
const PROBES: usize = 32;

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn random_floats(n: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

pub fn certify(graph: &ModelGraph, seed: u64) -> Result<QuantizedModel, CliError> {
    let mut q = QuantizedModel::quantize(graph, QuantScheme::default()).map_err(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let probes: Vec<Vec<f32>> = (0..PROBES)
        .map(|_| random_floats(q.input_len(), &mut rng))
        .collect();
    let report = q.certify(&probes).map_err(data)?;
    if !report.pass {
        let bad: Vec<&str> = report
            .entries
            .iter()
            .filter(|e| !e.pass)
            .map(|e| e.site.as_str())
            .collect();
        return Err(CliError::Data(format!(
            "{} fails the range check at {}",
            graph.name,
            bad.join(", ")
        )));
    }
    Ok(q)
}

pub fn certified_preset(p: Preset, seed: u64) -> Result<QuantizedModel, CliError> {
    certify(&make_preset(p, seed), seed)
}

pub fn random_inputs(q: &QuantizedModel, n: usize, seed: u64) -> Result<Vec<Vec<i64>>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1_0000);
    (0..n)
        .map(|_| {
            q.quantize_input(&random_floats(q.input_len(), &mut rng))
                .map_err(data)
        })
        .collect()
}

fn load_graph(settings: &Settings) -> Result<ModelGraph, CliError> {
    match (&settings.model, &settings.preset) {
        (Some(path), None) => load_model(path).map_err(data),
        (None, Some(name)) => Ok(make_preset(
            name.parse().map_err(|e| CliError::Usage(format!("{e}")))?,
            settings.seed()?,
        )),
        (None, None) => Err(CliError::Usage(
            "give --model <manifest> or --preset <name>".into(),
        )),
        (Some(_), Some(_)) => Err(CliError::Usage("--model and --preset are exclusive".into())),
    }
}

fn inputs(settings: &Settings, q: &QuantizedModel) -> Result<Vec<Vec<i64>>, CliError> {
    match &settings.input {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let floats: Vec<Vec<f32>> = serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            if floats.is_empty() {
                return Err(CliError::Data("input file holds no inputs".into()));
            }
            floats
                .iter()
                .map(|x| q.quantize_input(x).map_err(data))
                .collect()
        }
        None => random_inputs(q, settings.inputs.unwrap_or(1).max(1), settings.seed()?),
    }
}

fn production_config(settings: &Settings) -> Result<SoundnessConfig, CliError> {
    let field = settings.field(settings.single_rho(1 << 19)?)?;
    SoundnessConfig::new(settings.single_k(2)?, field).map_err(|e| CliError::Usage(e.to_string()))
}

fn spend(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".spent");
    PathBuf::from(s)
}

/// Private run against a tape file, which is renamed to `*.spent` once read.
fn run_from_tape(
    settings: &Settings,
    q: &QuantizedModel,
    cfg: SoundnessConfig,
    mode: Mode,
    xs: &[Vec<i64>],
    path: &Path,
) -> Result<RunReport, CliError> {
    if xs.len() != 1 {
        return Err(CliError::Usage(
            "a tape covers exactly one input; use --inputs 1".into(),
        ));
    }
    let bytes =
        std::fs::read(path).map_err(|e| CliError::Data(format!("tape {}: {e}", path.display())))?;
    std::fs::rename(path, spend(path))
        .map_err(|e| CliError::Data(format!("tape {}: {e}", path.display())))?;
    let (tape, store) = read_tape(&bytes).map_err(data)?;
    let session = Session::new(q, cfg, settings.key()?, tape.run_id()).map_err(data)?;
    let secret = match mode {
        Mode::PrivateVerify => Some(session.prepare_secret().map_err(data)?.0),
        _ => None,
    };
    let mut adv = Adversary::new(
        q,
        UntrustedHost::new(q).with_store(store),
        settings.strategy()?,
        settings.seed()?,
    );
    session
        .run_private(
            &xs[0],
            &tape,
            secret.as_ref(),
            &mut adv,
            mode == Mode::PrivateVerify,
        )
        .map_err(data)
}

pub fn cmd_verify_model(settings: &Settings, out: &mut dyn Write) -> Result<(), CliError> {
    let mode: Mode = settings
        .mode
        .as_deref()
        .unwrap_or("verify-plain")
        .parse()
        .map_err(CliError::Usage)?;
    if mode.is_private() && settings.tape.is_none() {
        return Err(CliError::Usage(format!(
            "tape required: --mode {mode} needs --tape <file> from make-tape"
        )));
    }
    let formats = settings.formats(&[])?;
    let cfg = production_config(settings)?;
    let graph = load_graph(settings)?;
    let q = certify(&graph, settings.seed()?)?;
    let xs = inputs(settings, &q)?;
    let run_id = settings.run_id.unwrap_or(0);
    let batch = settings.batch.first().copied().unwrap_or(xs.len());
    if batch == 0 {
        return Err(CliError::Usage("--batch must be positive".into()));
    }
    let report = match (&settings.tape, mode) {
        (Some(path), m) if m.is_private() => run_from_tape(settings, &q, cfg, mode, &xs, path)?,
        _ => {
            let session = Session::new(&q, cfg, settings.key()?, run_id).map_err(data)?;
            let strategy = settings.strategy()?;
            let mut adv = Adversary::new(&q, UntrustedHost::new(&q), strategy, settings.seed()?);
            match mode {
                Mode::Baseline => session.run_baseline(&xs),
                Mode::VerifyPlain => session.run_verified(&xs, Scheme::Plain, None, &mut adv),
                Mode::VerifyBatched => {
                    session.run_verified(&xs, Scheme::Batched(batch), None, &mut adv)
                }
                _ => session.run(mode, &xs, batch, strategy, settings.seed()?),
            }
            .map_err(data)?
        }
    };
    let baseline = Session::new(&q, cfg, settings.key()?, run_id)
        .and_then(|s| s.run_baseline(&xs))
        .map_err(data)?;

    if formats.iter().any(|f| f == "json") {
        let _ = writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(&report).map_err(data)?
        );
    } else {
        let _ = writeln!(
            out,
            "model      {} ({} linear layers)",
            report.model,
            q.linear_count()
        );
        let _ = writeln!(out, "mode       {}  inputs {}", report.mode, report.batch);
        let rejected = report
            .verdicts
            .iter()
            .find(|v| !matches!(v.status, slalom_core::runtime::LayerStatus::Accepted));
        match rejected {
            None => {
                let _ = writeln!(
                    out,
                    "verdict    accept ({} checks, bound {:.3e})",
                    report.checks,
                    report.soundness_bound.unwrap_or(0.0)
                );
            }
            Some(v) => {
                let _ = writeln!(
                    out,
                    "verdict    abort at linear layer {} ({:?})",
                    v.layer, v.status
                );
            }
        }
        let _ = writeln!(
            out,
            "output     {}",
            report.output_digest().unwrap_or_else(|| "⊥".into())
        );
        let _ = writeln!(
            out,
            "baseline   {}",
            baseline.output_digest().unwrap_or_default()
        );
        let _ = writeln!(
            out,
            "mults      trusted {}  verify {}  untrusted {}  offline {}",
            report.counters.trusted.multiplications,
            report.counters.verification.multiplications,
            report.counters.untrusted.multiplications,
            report.counters.preprocessing.multiplications
        );
        let _ = writeln!(
            out,
            "transcript {} bytes, storage {} bytes",
            report.transcript_bytes, report.storage_bytes
        );
    }
    if let Some(dir) = &settings.out {
        std::fs::create_dir_all(dir).map_err(data)?;
        std::fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(&report).map_err(data)? + "\n",
        )
        .map_err(data)?;
        std::fs::write(dir.join("transcript.jsonl"), report.transcript.to_jsonl()).map_err(data)?;
    }
    if report.accepted() {
        Ok(())
    } else {
        Err(CliError::Abort(
            "run aborted: an outsourced result failed its check".into(),
        ))
    }
}

pub fn cmd_make_tape(settings: &Settings, out: &mut dyn Write) -> Result<(), CliError> {
    let graph = load_graph(settings)?;
    let q = certify(&graph, settings.seed()?)?;
    let runs = settings.runs.unwrap_or(1);
    let first = settings.run_id.unwrap_or(0);
    let dir = settings.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let key = settings.key()?;
    if runs > 0 {
        std::fs::create_dir_all(&dir).map_err(data)?;
    }
    for run in first..first + runs as u64 {
        let session =
            Session::new(&q, SoundnessConfig::default(), key.clone(), run).map_err(data)?;
        let mut store = TapeStore::new();
        let (tape, _) = session.prepare_tape(&mut store).map_err(data)?;
        let bytes = write_tape(&tape, &store).map_err(data)?;
        let path = dir.join(format!("tape-{run}.bin"));
        std::fs::write(&path, &bytes).map_err(data)?;
        let _ = writeln!(
            out,
            "{}: run {run}, {} records, {} plaintext elements, {} bytes",
            path.display(),
            tape.records().len(),
            tape.plaintext_elements(),
            bytes.len()
        );
    }
    Ok(())
}

pub fn cmd_make_preset(settings: &Settings, out: &mut dyn Write) -> Result<(), CliError> {
    let name = settings
        .preset
        .as_deref()
        .ok_or_else(|| CliError::Usage("--preset <name> is required".into()))?;
    let p: Preset = name.parse().map_err(|e| CliError::Usage(format!("{e}")))?;
    let graph = make_preset(p, settings.seed()?);
    let dir = settings.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(data)?;
    let path = dir.join(format!("{}.json", p.name()));
    save_model(&graph, &path).map_err(data)?;
    let _ = writeln!(out, "wrote {}", path.display());
    Ok(())
}
