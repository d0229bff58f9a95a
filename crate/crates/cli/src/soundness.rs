use std::io::Write;

use slalom_core::model::LinearKind;
use slalom_core::verify::{soundness_experiment, CheckRegime, ExperimentResult, SoundnessConfig};

use crate::report::write_reports;
use crate::settings::parse_tamper;
use crate::{CliError, Settings};

pub fn rows(settings: &Settings) -> Result<Vec<ExperimentResult>, CliError> {
    let seed = settings.seed()?;
    let trials = settings.trials.unwrap_or(10_000);
    let tamper = parse_tamper(settings.adversary.as_deref().unwrap_or("tamper-entry"))?;
    let regime = match settings.regime.as_deref().unwrap_or("online") {
        "online" => CheckRegime::Online,
        "preprocessed" => CheckRegime::Preprocessed,
        other => return Err(CliError::Usage(format!("unknown regime '{other}'"))),
    };
    let kinds = match settings.kind.as_deref().unwrap_or("fc") {
        "all" => LinearKind::ALL.to_vec(),
        name => vec![LinearKind::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| CliError::Usage(format!("unknown layer kind '{name}'")))?],
    };
    let ks = if settings.k.is_empty() {
        vec![1, 2]
    } else {
        settings.k.clone()
    };
    let rhos = if settings.rho.is_empty() {
        vec![1]
    } else {
        settings.rho.clone()
    };
    let mut out = Vec::new();
    for kind in kinds {
        for &rho in &rhos {
            for &k in &ks {
                let cfg = SoundnessConfig::measurement(k, settings.field(rho)?)
                    .map_err(|e| CliError::Usage(e.to_string()))?;
                out.push(
                    soundness_experiment(kind, tamper, regime, &cfg, trials, seed)
                        .map_err(|e| CliError::Usage(e.to_string()))?,
                );
            }
        }
    }
    Ok(out)
}

pub fn cmd_soundness(settings: &Settings, out: &mut dyn Write) -> Result<(), CliError> {
    let formats = settings.formats(&["csv"])?;
    let rows = rows(settings)?;
    let _ = writeln!(
        out,
        "{:<10} {:>4} {:>3} {:>7} {:>9} {:>21} {:>9} {:>5}",
        "kind", "|S|", "k", "trials", "rate", "99% CI", "bound", "ok"
    );
    for r in &rows {
        let _ = writeln!(
            out,
            "{:<10} {:>4} {:>3} {:>7} {:>9.5} [{:>8.5}, {:>8.5}] {:>9.5} {:>5}",
            r.kind.name(),
            r.check_set_size,
            r.repetitions,
            r.trials,
            r.rate,
            r.ci_low,
            r.ci_high,
            r.bound,
            if r.pass { "yes" } else { "NO" }
        );
    }
    #[derive(serde::Serialize)]
    struct Flat<'a> {
        kind: &'a str,
        regime: CheckRegime,
        check_set_size: u64,
        k: u32,
        trials: usize,
        accepted: usize,
        rate: f64,
        ci_low: f64,
        ci_high: f64,
        bound: f64,
        pass: bool,
    }
    let flat: Vec<Flat> = rows
        .iter()
        .map(|r| Flat {
            kind: r.kind.name(),
            regime: r.regime,
            check_set_size: r.check_set_size,
            k: r.repetitions,
            trials: r.trials,
            accepted: r.accepted,
            rate: r.rate,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            bound: r.bound,
            pass: r.pass,
        })
        .collect();
    if let Some(dir) = &settings.out {
        for p in write_reports(
            &flat,
            dir,
            "soundness",
            &formats,
            "acceptance rate x 1e4",
            |r| {
                (
                    format!("{} |S|={} k={}", r.kind, r.check_set_size, r.k),
                    r.rate * 1e4,
                )
            },
        )? {
            let _ = writeln!(out, "wrote {}", p.display());
        }
    } else if formats.iter().any(|f| f == "json") {
        let _ = writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(&flat).map_err(|e| CliError::Data(e.to_string()))?
        );
    }
    if rows.iter().all(|r| r.pass) {
        Ok(())
    } else {
        Err(CliError::Abort(
            "an empirical acceptance rate exceeded its bound".into(),
        ))
    }
}
