//! Run configuration: parsing, command-line overrides, seed derivation and
//! the content hash that ties artifacts to the config that produced them.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dicgan::fields::ScaleMode;
use dicgan::gan::{GanSpec, TrainConfig};
use dicgan::gscore::GsConfig;
use dicgan::rng::derive_seed;
use dicgan::swd::SwdConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Fail;

pub const CONFIG_FILE: &str = "config.json";
pub const HASH_FILE: &str = "config.sha256";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Training (real) dataset in FTC1 form.
    pub train: Option<PathBuf>,
    /// Min-max scaling applied to unscaled inputs.
    pub scale: ScaleMode,
    /// Replace `gan.vm.strain_norm` by the 99.5th ε_vm percentile of the
    /// scaled training data.
    pub calibrate_strain_norm: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: None,
            scale: ScaleMode::PerSample,
            calibrate_strain_norm: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Generated samples per evaluation; defaults to the real dataset size.
    pub samples: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    /// Epochs at which both architectures are evaluated; empty means the
    /// final epoch only.
    pub epochs: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub gan: GanSpec,
    pub train: TrainConfig,
    pub swd: SwdConfig,
    pub gs: GsConfig,
    pub eval: EvalConfig,
    pub compare: CompareConfig,
    pub out: Option<PathBuf>,
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub physics_guided: Option<bool>,
    pub literal_strain: bool,
    pub out: Option<PathBuf>,
    pub real: Option<PathBuf>,
}

impl RunConfig {
    /// Read a config file; relative data paths are taken from its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Fail::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Fail::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(p) = &cfg.data.train {
            if p.is_relative() {
                cfg.data.train = Some(base.join(p));
            }
        }
        if let Some(p) = &cfg.out {
            if p.is_relative() {
                cfg.out = Some(base.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
    }

    /// Apply overrides, derive the per-module seeds from the master seed and
    /// validate everything.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(e) = o.epochs {
            self.train.epochs = e;
        }
        if let Some(p) = o.physics_guided {
            self.gan.physics_guided = p;
        }
        if o.literal_strain {
            self.gan.vm.symmetric = false;
        }
        if o.out.is_some() {
            self.out = o.out.clone();
        }
        if o.real.is_some() {
            self.data.train = o.real.clone();
        }
        self.train.seed = self.seed;
        self.swd.seed = derive_seed(self.seed, "swd", 0);
        self.gs.seed = derive_seed(self.seed, "gs", 0);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |r: dicgan::Result<()>| r.map_err(|e| Fail::config(e.to_string()));
        wrap(self.gan.validate())?;
        wrap(self.gan.vm.validate())?;
        wrap(self.train.validate())?;
        wrap(self.swd.validate())?;
        wrap(self.gs.validate())?;
        if self.eval.samples == Some(0) {
            return Err(Fail::config("eval.samples must be positive").into());
        }
        if self.compare.epochs.iter().any(|&e| e == 0 || e > self.train.epochs) {
            return Err(Fail::config(format!(
                "compare.epochs must lie in 1..={}, got {:?}",
                self.train.epochs, self.compare.epochs
            ))
            .into());
        }
        Ok(())
    }

    /// Canonical bytes as recorded in a run directory. The output location
    /// is left out so a run directory can move without invalidating it.
    pub fn to_json(&self) -> Vec<u8> {
        let rec = RunConfig {
            out: None,
            ..self.clone()
        };
        let mut v = serde_json::to_vec_pretty(&rec).expect("config serializes");
        v.push(b'\n');
        v
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Fail::config("no output directory: pass --out or set `out`").into())
    }

    pub fn train_path(&self) -> Result<&Path> {
        self.data
            .train
            .as_deref()
            .ok_or_else(|| Fail::config("no training data: pass --real or set `data.train`").into())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write the resolved config and its hash into `dir`; returns the hash.
pub fn write_run_config(dir: &Path, cfg: &RunConfig) -> Result<String> {
    let bytes = cfg.to_json();
    let hash = sha256_hex(&bytes);
    crate::artifacts::write(&dir.join(CONFIG_FILE), &bytes)?;
    crate::artifacts::write(&dir.join(HASH_FILE), format!("{hash}\n").as_bytes())?;
    Ok(hash)
}

/// Config stored in a run directory, with its recorded hash checked.
pub fn read_run_config(dir: &Path) -> Result<(RunConfig, String)> {
    let cfg_path = dir.join(CONFIG_FILE);
    let hash_path = dir.join(HASH_FILE);
    for p in [&cfg_path, &hash_path] {
        if !p.exists() {
            return Err(Fail::data(format!("missing artifact {}", p.display())).into());
        }
    }
    let bytes = std::fs::read(&cfg_path).with_context(|| format!("reading {}", cfg_path.display()))?;
    let recorded = std::fs::read_to_string(&hash_path)
        .with_context(|| format!("reading {}", hash_path.display()))?;
    let actual = sha256_hex(&bytes);
    if recorded.trim() != actual {
        return Err(Fail::config(format!(
            "config hash mismatch in {}: recorded {}, computed {actual}",
            dir.display(),
            recorded.trim()
        ))
        .into());
    }
    let cfg: RunConfig = serde_json::from_slice(&bytes)
        .map_err(|e| Fail::config(format!("{}: {e}", cfg_path.display())))?;
    Ok((cfg, actual))
}

/// Base config for commands that may run inside an existing run directory:
/// an explicit `--config` wins, then the directory's own config.
pub fn base_config(explicit: Option<&Path>, out: Option<&Path>) -> Result<RunConfig> {
    if let Some(p) = explicit {
        return RunConfig::load(p);
    }
    if let Some(dir) = out {
        if dir.join(CONFIG_FILE).exists() {
            return Ok(read_run_config(dir)?.0);
        }
    }
    Ok(RunConfig::default())
}

/// Record `cfg` in `dir`, or check it against the config already there.
pub fn adopt_run_config(dir: &Path, cfg: &RunConfig) -> Result<String> {
    if dir.join(CONFIG_FILE).exists() {
        let (_, hash) = read_run_config(dir)?;
        let mine = sha256_hex(&cfg.to_json());
        if hash != mine {
            return Err(Fail::config(format!(
                "{} holds a run with a different config (hash {hash}); use another --out",
                dir.display()
            ))
            .into());
        }
        Ok(hash)
    } else {
        write_run_config(dir, cfg)
    }
}
