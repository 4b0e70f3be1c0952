//! DC-GAN for displacement fields: architectures, losses, training,
//! sampling, collapse detection and checkpoints.

mod checkpoint;
mod net;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::strain::VmConfig;
use crate::tensorcore::{AdamConfig, Graph, Scalar, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest};
pub use net::{Discriminator, Generator, ParamSet, LEAKY_SLOPE};
pub use train::{
    collapse_check, collapse_statistic, latent_batch, sample, train, CollapseReport, StepRecord, TrainEvent,
    TrainState,
};

/// Probabilities are kept this far from 0 and 1 inside the logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

/// Architecture of both networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanSpec {
    pub latent_dim: usize,
    /// Side of the feature map produced by the generator's dense layer.
    pub base_grid: usize,
    /// Channels of that feature map; halved by every up block.
    pub base_channels: usize,
    pub up_blocks: usize,
    pub down_blocks: usize,
    /// Width of the first discriminator block; doubles per block, the
    /// last block has a single channel.
    pub disc_channels: usize,
    pub physics_guided: bool,
    pub vm: VmConfig,
    pub init_std: f64,
}

impl Default for GanSpec {
    fn default() -> Self {
        GanSpec {
            latent_dim: 5,
            base_grid: 4,
            base_channels: 64,
            up_blocks: 2,
            down_blocks: 3,
            disc_channels: 64,
            physics_guided: false,
            vm: VmConfig::default(),
            init_std: 0.02,
        }
    }
}

impl GanSpec {
    /// Full-size 256×256 configuration.
    pub fn full_scale() -> Self {
        GanSpec {
            base_grid: 8,
            base_channels: 512,
            up_blocks: 5,
            ..GanSpec::default()
        }
    }

    /// Desk configuration producing `resolution`×`resolution` fields.
    pub fn desk(resolution: usize, physics_guided: bool) -> Result<Self> {
        let spec = GanSpec {
            base_grid: 4,
            up_blocks: (resolution / 4).max(1).trailing_zeros() as usize,
            physics_guided,
            ..GanSpec::default()
        };
        if spec.resolution() != resolution {
            return Err(Error::Config(format!(
                "desk resolution must be 4·2^d with d ≥ 1, got {resolution}"
            )));
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn resolution(&self) -> usize {
        self.base_grid << self.up_blocks
    }

    pub fn disc_input_channels(&self) -> usize {
        if self.physics_guided {
            3
        } else {
            2
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("latent_dim", self.latent_dim),
            ("base_grid", self.base_grid),
            ("base_channels", self.base_channels),
            ("up_blocks", self.up_blocks),
            ("down_blocks", self.down_blocks),
            ("disc_channels", self.disc_channels),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.up_blocks > 12 || self.down_blocks > 12 {
            return bad("block counts above 12 are not supported".into());
        }
        let r = self.resolution();
        if r % (1 << self.down_blocks) != 0 {
            return bad(format!(
                "resolution {r} is not divisible by 2^{} for the discriminator",
                self.down_blocks
            ));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return bad(format!("init_std must be >= 0, got {}", self.init_std));
        }
        self.vm.validate()
    }

    /// Check that datasets of `h`×`w` fields fit this architecture.
    pub fn check_resolution(&self, h: usize, w: usize) -> Result<()> {
        let r = self.resolution();
        if h != r || w != r {
            return Err(Error::Config(format!(
                "architecture produces {r}x{r} fields (base grid {} doubled {} times) but data is {h}x{w}",
                self.base_grid, self.up_blocks
            )));
        }
        Ok(())
    }
}

/// Optimization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Collapse threshold; `None` calibrates it from the training data.
    pub collapse_tau: Option<f64>,
    /// Emit a checkpoint every this many epochs (0: final only).
    pub checkpoint_every: usize,
    /// Number of generated samples used by the collapse check.
    pub collapse_samples: usize,
    /// Restarts with a fresh seed after a detected collapse.
    pub max_restarts: usize,
    /// Use −log D(G(z)) instead of −log(1 − D(G(z))) in the discriminator loss.
    pub literal_d_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 8,
            adam: AdamConfig::default(),
            seed: 0,
            collapse_tau: None,
            checkpoint_every: 0,
            collapse_samples: 64,
            max_restarts: 0,
            literal_d_loss: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size must be at least 2 for batch normalization, got {}",
                self.batch_size
            )));
        }
        if self.collapse_samples < 2 {
            return Err(Error::Config("collapse check needs at least 2 samples".into()));
        }
        if let Some(t) = self.collapse_tau {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("collapse threshold must be >= 0, got {t}")));
            }
        }
        self.adam.validate()
    }

    /// Optimization steps in one epoch over `n` samples. A trailing batch
    /// of one sample is skipped because batch statistics need two.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        let full = n / self.batch_size;
        if n % self.batch_size >= 2 {
            full + 1
        } else {
            full
        }
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn mean(v: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = v.len() as f64;
    v.sum::<f64>() / n
}

/// Discriminator loss, averaged over the batch:
/// mean(−ln D(x)) + mean(−ln(1 − D(G(z)))), or mean(−ln D(G(z))) for the
/// second term when `literal` is set.
pub fn d_loss(d_real: &[f64], d_fake: &[f64], literal: bool) -> f64 {
    let real = mean(d_real.iter().map(|&p| -clamp_prob(p).ln()));
    let fake = mean(d_fake.iter().map(|&p| {
        let p = clamp_prob(p);
        if literal {
            -p.ln()
        } else {
            -(1.0 - p).ln()
        }
    }));
    real + fake
}

/// Generator loss mean(−ln D(G(z))).
pub fn g_loss(d_fake: &[f64]) -> f64 {
    mean(d_fake.iter().map(|&p| -clamp_prob(p).ln()))
}

pub fn d_loss_node<T: Scalar>(g: &mut Graph<T>, d_real: Var, d_fake: Var, literal: bool) -> Result<Var> {
    let a = g.neg_log_mean(d_real, false, PROB_CLAMP);
    let b = g.neg_log_mean(d_fake, !literal, PROB_CLAMP);
    g.add(a, b)
}

pub fn g_loss_node<T: Scalar>(g: &mut Graph<T>, d_fake: Var) -> Var {
    g.neg_log_mean(d_fake, false, PROB_CLAMP)
}
