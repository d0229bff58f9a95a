use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use slalom_core::cost::{batched_verification, preprocessed_verification};
use slalom_core::field::{FieldParams, PrfKey};
use slalom_core::kernels::{linear_forward, linear_transpose, LayerOps};
use slalom_core::model::{LinearOp, Preset};
use slalom_core::quantize::QLinear;
use slalom_core::runtime::{Mode, Session, Strategy};
use slalom_core::verify::{
    check_online, check_with_secret, CheckSource, SeparablePair, SoundnessConfig,
};

use crate::models::{certified_preset, random_inputs};
use crate::report::write_reports;
use crate::{CliError, Settings};

/// Bumped whenever a CSV column is added, removed or changes meaning.
pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub schema_version: u32,
    pub workload: String,
    pub config: String,
    pub scheme: String,
    pub batch: usize,
    pub k: u32,
    /// Multiplications of direct trusted evaluation of the batch.
    pub compute_mults: u64,
    /// Multiplications the checks actually performed.
    pub verify_mults: u64,
    /// `k` times the closed-form cost for this scheme.
    pub predicted_verify_mults: u64,
    pub mult_ratio: f64,
    pub predicted_ratio: f64,
    pub formula_match: bool,
    pub compute_seconds: f64,
    pub verify_seconds: f64,
    pub speedup: f64,
    pub inputs_per_second: f64,
}

struct Measured {
    compute_mults: u64,
    verify_mults: u64,
    predicted: u64,
    compute_seconds: f64,
    verify_seconds: f64,
}

#[allow(clippy::too_many_arguments)]
fn row(
    workload: &str,
    config: String,
    scheme: &str,
    batch: usize,
    k: u32,
    m: Measured,
) -> BenchRow {
    let ratio = |c: u64, v: u64| if v == 0 { 0.0 } else { c as f64 / v as f64 };
    BenchRow {
        schema_version: CSV_SCHEMA_VERSION,
        workload: workload.into(),
        config,
        scheme: scheme.into(),
        batch,
        k,
        compute_mults: m.compute_mults,
        verify_mults: m.verify_mults,
        predicted_verify_mults: m.predicted,
        mult_ratio: ratio(m.compute_mults, m.verify_mults),
        predicted_ratio: ratio(m.compute_mults, m.predicted),
        formula_match: m.verify_mults == m.predicted,
        compute_seconds: m.compute_seconds,
        verify_seconds: m.verify_seconds,
        speedup: if m.verify_seconds > 0.0 {
            m.compute_seconds / m.verify_seconds
        } else {
            0.0
        },
        inputs_per_second: if m.verify_seconds > 0.0 {
            batch as f64 / m.verify_seconds
        } else {
            0.0
        },
    }
}

fn random_layer(op: LinearOp, rng: &mut ChaCha8Rng) -> QLinear {
    QLinear {
        index: 0,
        op,
        weight: (0..op.weight_len())
            .map(|_| rng.random_range(-256..=256))
            .collect(),
        bias: vec![0; op.bias_len()],
    }
}

fn random_batch(len: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<i64>> {
    (0..batch)
        .map(|_| (0..len).map(|_| rng.random_range(-256..=256)).collect())
        .collect()
}

/// Direct evaluation; returns outputs, multiplications and seconds.
fn compute(
    layers: &[&QLinear],
    xs: &[Vec<i64>],
    params: &FieldParams,
) -> Result<(Vec<Vec<i64>>, u64, f64), CliError> {
    let start = Instant::now();
    let mut ops = LayerOps::default();
    let mut ys = Vec::with_capacity(xs.len());
    for x in xs {
        let mut v = x.clone();
        for l in layers {
            v = linear_forward(&l.op, &v, &l.weight, None, params, &mut ops).map_err(data)?;
        }
        ys.push(v);
    }
    Ok((ys, ops.multiplications, start.elapsed().as_secs_f64()))
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn refs(v: &[Vec<i64>]) -> Vec<&[i64]> {
    v.iter().map(Vec::as_slice).collect()
}

/// Batched online checks, layer by layer, given each layer's inputs and
/// outputs.
fn online(
    layers: &[&QLinear],
    acts: &[Vec<Vec<i64>>],
    cfg: &SoundnessConfig,
    seed: u64,
) -> Result<(u64, f64), CliError> {
    let mut src = CheckSource::for_run(&PrfKey::from_seed(seed), 0, *cfg.field());
    let start = Instant::now();
    let mut mults = 0;
    for (i, l) in layers.iter().enumerate() {
        let out =
            check_online(l, &refs(&acts[i]), &refs(&acts[i + 1]), cfg, &mut src).map_err(data)?;
        if !out.verdict.accepted() {
            return Err(CliError::Abort(format!(
                "honest {} layer rejected",
                l.op.kind().name()
            )));
        }
        mults += out.ops.multiplications;
    }
    Ok((mults, start.elapsed().as_secs_f64()))
}

/// Preprocessed checks of the end-to-end map from `xs` to `ys`; `fold`
/// computes `s~` for a check vector over the final output.
fn preprocessed(
    xs: &[Vec<i64>],
    ys: &[Vec<i64>],
    cfg: &SoundnessConfig,
    seed: u64,
    fold: impl Fn(&[i64]) -> Result<Vec<i64>, CliError>,
) -> Result<(u64, f64), CliError> {
    let mut src = CheckSource::for_run(&PrfKey::from_seed(seed), 1, *cfg.field());
    let secrets = (0..cfg.repetitions())
        .map(|_| {
            let s = src.draw(ys[0].len());
            fold(&s).map(|t| (s, t))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let start = Instant::now();
    let mut ops = LayerOps::default();
    for (x, y) in xs.iter().zip(ys) {
        for (s, t) in &secrets {
            if !check_with_secret(x, y, s, t, cfg.field(), &mut ops) {
                return Err(CliError::Abort("honest output rejected".into()));
            }
        }
    }
    Ok((ops.multiplications, start.elapsed().as_secs_f64()))
}

fn synthetic(
    workload: &str,
    config: String,
    layers: &[QLinear],
    batch: usize,
    cfg: &SoundnessConfig,
    seed: u64,
    fused: Option<&SeparablePair>,
) -> Result<Vec<BenchRow>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = *cfg.field();
    let k = cfg.repetitions();
    let lrefs: Vec<&QLinear> = layers.iter().collect();
    let xs = random_batch(layers[0].op.input_len(), batch, &mut rng);
    let mut acts = vec![xs.clone()];
    for l in &lrefs {
        let (ys, _, _) = compute(&[l], acts.last().expect("nonempty"), &params)?;
        acts.push(ys);
    }
    let (ys, compute_mults, compute_seconds) = compute(&lrefs, &xs, &params)?;

    let (verify_mults, verify_seconds) = online(&lrefs, &acts, cfg, seed)?;
    let predicted = u64::from(k)
        * layers
            .iter()
            .map(|l| batched_verification(&l.op, batch))
            .sum::<u64>();
    let mut rows = vec![row(
        workload,
        config.clone(),
        "batched",
        batch,
        k,
        Measured {
            compute_mults,
            verify_mults,
            predicted,
            compute_seconds,
            verify_seconds,
        },
    )];

    let fold = |s: &[i64]| -> Result<Vec<i64>, CliError> {
        let mut ops = LayerOps::default();
        match fused {
            Some(pair) => pair.fold(s, &params, &mut ops).map_err(data),
            None => linear_transpose(&layers[0].op, s, &layers[0].weight, &params, &mut ops)
                .map_err(data),
        }
    };
    let (verify_mults, verify_seconds) = preprocessed(&xs, &ys, cfg, seed, fold)?;
    let (x_len, y_len) = (
        layers[0].op.input_len() as u64,
        layers[layers.len() - 1].op.output_len() as u64,
    );
    let predicted = u64::from(k) * batch as u64 * (x_len + y_len);
    if layers.len() == 1 {
        debug_assert_eq!(
            predicted,
            u64::from(k) * preprocessed_verification(&layers[0].op, batch)
        );
    }
    rows.push(row(
        workload,
        config,
        "preprocessed",
        batch,
        k,
        Measured {
            compute_mults,
            verify_mults,
            predicted,
            compute_seconds,
            verify_seconds,
        },
    ));
    Ok(rows)
}

fn preset_rows(
    p: Preset,
    batch: usize,
    cfg: &SoundnessConfig,
    seed: u64,
) -> Result<Vec<BenchRow>, CliError> {
    let q = certified_preset(p, seed)?;
    let xs = random_inputs(&q, batch, seed)?;
    let k = cfg.repetitions();
    let session = Session::new(&q, *cfg, PrfKey::from_seed(seed), 0).map_err(data)?;
    let base = session.run_baseline(&xs).map_err(data)?;
    let compute_mults = base.counters.trusted.multiplications;
    let compute_seconds = base.timings.online;
    let layers = q.linear_layers();
    let sum = |f: &dyn Fn(&LinearOp) -> u64| layers.iter().map(|l| f(&l.op)).sum::<u64>();
    let mut rows = Vec::new();
    for mode in Mode::ALL.into_iter().filter(|m| *m != Mode::Baseline) {
        let (mut verify_mults, mut online_seconds) = (0, 0.0);
        let groups: Vec<&[Vec<i64>]> = if mode.is_private() {
            xs.chunks(1).collect()
        } else {
            vec![&xs[..]]
        };
        for (i, g) in groups.into_iter().enumerate() {
            let s = Session::new(&q, *cfg, PrfKey::from_seed(seed), i as u64).map_err(data)?;
            let r = s
                .run(mode, g, batch, Strategy::Honest, seed)
                .map_err(data)?;
            if r.outputs.as_ref()
                != Some(
                    &base.outputs.as_ref().expect("baseline output")
                        [i * g.len()..(i + 1) * g.len()]
                        .to_vec(),
                )
            {
                return Err(CliError::Abort(format!(
                    "{} {mode} differs from baseline",
                    p.name()
                )));
            }
            verify_mults += r.counters.verification.multiplications;
            online_seconds += r.timings.online;
        }
        let b = batch as u64;
        let predicted = u64::from(k)
            * match mode {
                Mode::VerifyPlain => b * sum(&|op| batched_verification(op, 1)),
                Mode::VerifyBatched => sum(&|op| batched_verification(op, batch)),
                Mode::VerifyPreproc | Mode::PrivateVerify => {
                    sum(&|op| preprocessed_verification(op, batch))
                }
                _ => 0,
            };
        let mut r = row(
            p.name(),
            format!("B={batch}"),
            mode.name(),
            batch,
            k,
            Measured {
                compute_mults,
                verify_mults,
                predicted,
                compute_seconds,
                verify_seconds: online_seconds,
            },
        );
        r.inputs_per_second = if online_seconds > 0.0 {
            batch as f64 / online_seconds
        } else {
            0.0
        };
        r.speedup = if online_seconds > 0.0 {
            compute_seconds / online_seconds
        } else {
            0.0
        };
        rows.push(r);
    }
    Ok(rows)
}

/// Every grid point of the requested workload.
pub fn bench_rows(settings: &Settings) -> Result<Vec<BenchRow>, CliError> {
    let seed = settings.seed()?;
    let k = settings.single_k(2)?;
    let cfg = SoundnessConfig::measurement(k, settings.field(settings.single_rho(1 << 19)?)?)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let workload = settings.workload.as_deref().unwrap_or("all");
    let batches = if settings.batch.is_empty() {
        vec![1]
    } else {
        settings.batch.clone()
    };
    if batches.contains(&0) || settings.dims.contains(&0) {
        return Err(CliError::Usage("grid points must be positive".into()));
    }
    let dims = |d: &[usize]| {
        if settings.dims.is_empty() {
            d.to_vec()
        } else {
            settings.dims.clone()
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let all = workload == "all";
    if all || workload == "matmul" {
        for n in dims(&[128, 256]) {
            let l = random_layer(LinearOp::Fc { h_in: n, h_out: n }, &mut rng);
            rows.extend(synthetic(
                "matmul",
                format!("n={n}"),
                &[l],
                n,
                &cfg,
                seed,
                None,
            )?);
        }
    }
    if all || workload == "conv" {
        for c in dims(&[32, 64]) {
            for &b in &batches {
                let l = random_layer(LinearOp::conv(14, 14, c, c, 3, 1), &mut rng);
                rows.extend(synthetic(
                    "conv",
                    format!("14x14x{c} k3"),
                    &[l],
                    b,
                    &cfg,
                    seed,
                    None,
                )?);
            }
        }
    }
    if all || workload == "separable" {
        for c in dims(&[32, 64]) {
            for &b in &batches {
                let dw = random_layer(LinearOp::depthwise(14, 14, c, 3, 1), &mut rng);
                let pw = random_layer(
                    LinearOp::Pointwise {
                        h: 14,
                        w: 14,
                        c_in: c,
                        c_out: c,
                    },
                    &mut rng,
                );
                let pair = SeparablePair {
                    depthwise: dw.clone(),
                    pointwise: pw.clone(),
                };
                rows.extend(synthetic(
                    "separable",
                    format!("14x14x{c} k3"),
                    &[dw, pw],
                    b,
                    &cfg,
                    seed,
                    Some(&pair),
                )?);
            }
        }
    }
    if all || workload == "preset" {
        let presets = match &settings.preset {
            Some(name) => vec![name
                .parse::<Preset>()
                .map_err(|e| CliError::Usage(e.to_string()))?],
            None => Preset::ALL.to_vec(),
        };
        for p in presets {
            for &b in &batches {
                rows.extend(preset_rows(p, b, &cfg, seed)?);
            }
        }
    }
    if rows.is_empty() {
        return Err(CliError::Usage(format!(
            "workload '{workload}' selects no grid points"
        )));
    }
    Ok(rows)
}

pub fn cmd_bench(settings: &Settings, out: &mut dyn Write) -> Result<(), CliError> {
    let formats = settings.formats(&["csv", "json"])?;
    let rows = bench_rows(settings)?;
    let _ = writeln!(
        out,
        "{:<22} {:<16} {:<15} {:>5} {:>14} {:>12} {:>10} {:>8}",
        "workload", "config", "scheme", "B", "compute", "verify", "ratio", "formula"
    );
    for r in &rows {
        let _ = writeln!(
            out,
            "{:<22} {:<16} {:<15} {:>5} {:>14} {:>12} {:>10.1} {:>8}",
            r.workload,
            r.config,
            r.scheme,
            r.batch,
            r.compute_mults,
            r.verify_mults,
            r.mult_ratio,
            if r.formula_match { "exact" } else { "differs" }
        );
    }
    let dir = settings.out.clone().unwrap_or_else(|| PathBuf::from("."));
    for p in write_reports(
        &rows,
        &dir,
        "bench",
        &formats,
        "compute / verify multiplications",
        |r| {
            (
                format!("{} {} {} B={}", r.workload, r.config, r.scheme, r.batch),
                r.mult_ratio,
            )
        },
    )? {
        let _ = writeln!(out, "wrote {}", p.display());
    }
    Ok(())
}
