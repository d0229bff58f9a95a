use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use slalom_core::field::{FieldParams, PrfKey};
use slalom_core::runtime::Strategy;
use slalom_core::verify::Tamper;

use crate::CliError;

/// Every tunable. Flags and the JSON config file share this shape; a flag
/// wins over the file, and `SLALOM_SEED` is the last resort for the seed.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Settings {
    /// baseline | verify-plain | verify-batched | verify-preproc | private | private-verify
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// Freivalds repetitions; a comma list for soundness grids.
    #[arg(long, global = true, value_delimiter = ',')]
    pub k: Vec<u32>,
    /// Check range bound; a comma list for soundness grids.
    #[arg(long, global = true, value_delimiter = ',')]
    pub rho: Vec<u32>,
    /// Batch size; a comma list for bench grids.
    #[arg(long, global = true, value_delimiter = ',')]
    pub batch: Vec<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// honest | tamper-entry[:layer[:index[:delta]]] | tamper-random[:layer]
    /// | scale-layer[:layer[:factor]] | replace-layer[:layer] | corrupt-tape[:layer]
    #[arg(long, global = true)]
    pub adversary: Option<String>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// csv, json, svg; a comma list.
    #[arg(long, global = true, value_delimiter = ',')]
    pub format: Vec<String>,

    /// matmul | conv | separable | preset | all
    #[arg(long, global = true)]
    pub workload: Option<String>,
    /// Sweep sizes: n for matmul, channels for conv and separable.
    #[arg(long, global = true, value_delimiter = ',')]
    pub dims: Vec<usize>,
    /// Layer kind for soundness runs: fc | conv | depthwise | pointwise | all
    #[arg(long, global = true)]
    pub kind: Option<String>,
    /// online | preprocessed
    #[arg(long, global = true)]
    pub regime: Option<String>,
    /// Model manifest path.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Sealed tape file for private modes.
    #[arg(long, global = true)]
    pub tape: Option<PathBuf>,
    /// JSON file with an array of float input vectors.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Number of random inputs when no input file is given.
    #[arg(long, global = true)]
    pub inputs: Option<usize>,
    #[arg(long, global = true)]
    pub runs: Option<usize>,
    /// First run id for tapes and sessions.
    #[arg(long, global = true)]
    pub run_id: Option<u64>,
    /// 32-byte master key, raw or as 64 hex characters.
    #[arg(long, global = true)]
    pub key_file: Option<PathBuf>,
}

fn pick<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

fn pick_vec<T>(flag: Vec<T>, file: Vec<T>) -> Vec<T> {
    if flag.is_empty() {
        file
    } else {
        flag
    }
}

impl Settings {
    pub fn load(path: &Path) -> Result<Settings, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    /// Flags in `self` override `file`.
    pub fn over(self, file: Settings) -> Settings {
        Settings {
            mode: pick(self.mode, file.mode),
            k: pick_vec(self.k, file.k),
            rho: pick_vec(self.rho, file.rho),
            batch: pick_vec(self.batch, file.batch),
            seed: pick(self.seed, file.seed),
            trials: pick(self.trials, file.trials),
            adversary: pick(self.adversary, file.adversary),
            out: pick(self.out, file.out),
            format: pick_vec(self.format, file.format),
            workload: pick(self.workload, file.workload),
            dims: pick_vec(self.dims, file.dims),
            kind: pick(self.kind, file.kind),
            regime: pick(self.regime, file.regime),
            model: pick(self.model, file.model),
            preset: pick(self.preset, file.preset),
            tape: pick(self.tape, file.tape),
            input: pick(self.input, file.input),
            inputs: pick(self.inputs, file.inputs),
            runs: pick(self.runs, file.runs),
            run_id: pick(self.run_id, file.run_id),
            key_file: pick(self.key_file, file.key_file),
        }
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var("SLALOM_SEED") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("SLALOM_SEED={v} is not an integer"))),
            Err(_) => Ok(0),
        }
    }

    pub fn single_k(&self, default: u32) -> Result<u32, CliError> {
        match self.k.as_slice() {
            [] => Ok(default),
            [k] => Ok(*k),
            _ => Err(CliError::Usage("--k takes one value here".into())),
        }
    }

    pub fn single_rho(&self, default: u32) -> Result<u32, CliError> {
        match self.rho.as_slice() {
            [] => Ok(default),
            [r] => Ok(*r),
            _ => Err(CliError::Usage("--rho takes one value here".into())),
        }
    }

    pub fn field(&self, rho: u32) -> Result<FieldParams, CliError> {
        FieldParams::default()
            .with_check_range(rho)
            .map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn formats(&self, default: &[&str]) -> Result<Vec<String>, CliError> {
        let f: Vec<String> = if self.format.is_empty() {
            default.iter().map(|s| s.to_string()).collect()
        } else {
            self.format.clone()
        };
        if let Some(bad) = f
            .iter()
            .find(|f| !["csv", "json", "svg"].contains(&f.as_str()))
        {
            return Err(CliError::Usage(format!("unknown format '{bad}'")));
        }
        Ok(f)
    }

    /// The master key: from `--key-file` if given, else expanded from the seed.
    pub fn key(&self) -> Result<PrfKey, CliError> {
        let Some(path) = &self.key_file else {
            return Ok(PrfKey::from_seed(self.seed()?));
        };
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Data(format!("key file {}: {e}", path.display())))?;
        let raw: Vec<u8> = if bytes.len() == 32 {
            bytes
        } else {
            hex::decode(String::from_utf8_lossy(&bytes).trim())
                .map_err(|e| CliError::Data(format!("key file: {e}")))?
        };
        let arr: [u8; 32] = raw
            .try_into()
            .map_err(|_| CliError::Data("key file must hold exactly 32 bytes".into()))?;
        Ok(PrfKey::from_bytes(arr))
    }

    pub fn strategy(&self) -> Result<Strategy, CliError> {
        parse_strategy(self.adversary.as_deref().unwrap_or("honest"))
    }
}

fn nums(parts: &[&str], spec: &str) -> Result<Vec<i64>, CliError> {
    parts
        .iter()
        .map(|p| {
            p.parse::<i64>()
                .map_err(|_| CliError::Usage(format!("bad number '{p}' in adversary '{spec}'")))
        })
        .collect()
}

fn arg(v: &[i64], i: usize, default: i64) -> i64 {
    v.get(i).copied().unwrap_or(default)
}

pub fn parse_strategy(spec: &str) -> Result<Strategy, CliError> {
    let norm = spec.replace('_', "-");
    let mut parts = norm.split(':');
    let name = parts.next().unwrap_or_default();
    let rest: Vec<&str> = parts.collect();
    let v = nums(&rest, spec)?;
    let layer = |i: usize| arg(&v, i, 0).max(0) as usize;
    Ok(match name {
        "honest" => Strategy::Honest,
        "tamper-entry" => Strategy::TamperEntry {
            layer: layer(0),
            index: arg(&v, 1, 0).max(0) as usize,
            delta: arg(&v, 2, 1),
        },
        "tamper-random" => Strategy::TamperRandom {
            layer: v.first().map(|&l| l.max(0) as usize),
        },
        "scale-layer" => Strategy::ScaleLayer {
            layer: layer(0),
            factor: arg(&v, 1, 2),
        },
        "replace-layer" => Strategy::ReplaceLayer { layer: layer(0) },
        "corrupt-tape" => Strategy::CorruptTape { layer: layer(0) },
        _ => return Err(CliError::Usage(format!("unknown adversary '{spec}'"))),
    })
}

/// The layer-level corruption a strategy name stands for in soundness runs.
pub fn parse_tamper(spec: &str) -> Result<Tamper, CliError> {
    Ok(match parse_strategy(spec)? {
        Strategy::Honest => Tamper::Honest,
        Strategy::TamperEntry { index, delta, .. } => Tamper::Entry { index, delta },
        Strategy::TamperRandom { .. } => Tamper::RandomEntry,
        Strategy::ScaleLayer { factor, .. } => Tamper::Scale { factor },
        Strategy::ReplaceLayer { .. } => Tamper::Replace,
        Strategy::CorruptTape { .. } => {
            return Err(CliError::Usage(
                "corrupt-tape has no layer-level equivalent".into(),
            ))
        }
    })
}
