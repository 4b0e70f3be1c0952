//! Checkpoints: every parameter and running statistic in one FTC1 file,
//! described by a JSON manifest stored next to it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CollapseReport, Discriminator, GanSpec, Generator, ParamSet, StepRecord, TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::fields::ftc::{self, FtcEntry};
use crate::fields::{sidecar_path, write_atomic};
use crate::tensorcore::{BatchNormStats, Tensor};

pub const CHECKPOINT_FORMAT: &str = "dicgan-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub spec: GanSpec,
    pub config: TrainConfig,
    #[serde(default)]
    pub config_hash: Option<String>,
    pub epoch: usize,
    pub run_seed: u64,
    pub restarts: usize,
    pub tau: f64,
    pub collapse: Option<CollapseReport>,
    pub losses: Vec<StepRecord>,
    pub tensors: Vec<TensorInfo>,
}

/// A loaded checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
}

fn push_set(entries: &mut Vec<FtcEntry>, set: &ParamSet<f32>) {
    for (n, p) in set.names.iter().zip(&set.params) {
        entries.push(FtcEntry::from_tensor(n, p));
    }
    for (n, s) in set.bn_names.iter().zip(&set.bn) {
        let c = s.running_mean.len();
        entries.push(FtcEntry::from_tensor(
            &format!("{n}.running_mean"),
            &Tensor::new(vec![c], s.running_mean.clone()).expect("bn stats"),
        ));
        entries.push(FtcEntry::from_tensor(
            &format!("{n}.running_var"),
            &Tensor::new(vec![c], s.running_var.clone()).expect("bn stats"),
        ));
    }
}

pub fn save_checkpoint(path: &Path, state: &TrainState, config_hash: Option<&str>) -> Result<()> {
    let mut entries = Vec::new();
    push_set(&mut entries, &state.generator.params);
    push_set(&mut entries, &state.discriminator.params);
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        spec: state.spec.clone(),
        config: state.config.clone(),
        config_hash: config_hash.map(str::to_string),
        epoch: state.epoch,
        run_seed: state.run_seed,
        restarts: state.restarts,
        tau: state.tau,
        collapse: state.collapse,
        losses: state.history.clone(),
        tensors: entries
            .iter()
            .map(|e| TensorInfo {
                name: e.name.clone(),
                shape: e.shape.clone(),
            })
            .collect(),
    };
    ftc::save_ftc(path, &entries)?;
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_atomic(&sidecar_path(path), &json)
}

fn fill_set(entries: &[FtcEntry], set: &mut ParamSet<f32>) -> Result<()> {
    for (n, p) in set.names.iter().zip(set.params.iter_mut()) {
        let t: Tensor<f32> = ftc::find(entries, n)?.to_tensor()?;
        if t.shape() != p.shape() {
            return Err(Error::Format(format!(
                "checkpoint tensor {n} has shape {:?}, architecture needs {:?}",
                t.shape(),
                p.shape()
            )));
        }
        *p = t;
    }
    for (n, s) in set.bn_names.iter().zip(set.bn.iter_mut()) {
        let c = s.running_mean.len();
        let get = |suffix: &str| -> Result<Vec<f32>> {
            let name = format!("{n}.{suffix}");
            let t: Tensor<f32> = ftc::find(entries, &name)?.to_tensor()?;
            if t.shape() != [c] {
                return Err(Error::Format(format!("checkpoint tensor {name} has shape {:?}", t.shape())));
            }
            Ok(t.into_data())
        };
        *s = BatchNormStats {
            running_mean: get("running_mean")?,
            running_var: get("running_var")?,
            ..s.clone()
        };
    }
    set.validate()
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let side = sidecar_path(path);
    let bytes = std::fs::read(&side).map_err(|e| Error::io(&side, e))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Format(format!("{}: {e}", side.display())))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint format {:?}",
            side.display(),
            manifest.format
        )));
    }
    let entries = ftc::load_ftc(path)?;
    let mut generator = Generator::new(&manifest.spec, 0)?;
    let mut discriminator = Discriminator::new(&manifest.spec, 0)?;
    fill_set(&entries, &mut generator.params)?;
    fill_set(&entries, &mut discriminator.params)?;
    Ok(Checkpoint {
        manifest,
        generator,
        discriminator,
    })
}
