use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{d_loss_node, g_loss_node, Discriminator, GanSpec, Generator, TrainConfig};
use crate::error::{Error, Result};
use crate::fields::{DataSource, DatasetMeta, FieldDataset};
use crate::rng;
use crate::tensorcore::{normal_tensor, AdamState, BnMode, Graph, Tensor};

const SAMPLE_CHUNK: usize = 64;

/// One optimization step of both networks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub l_d: f64,
    pub l_g: f64,
    pub d_real_mean: f64,
    pub d_fake_mean: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub statistic: f64,
    pub tau: f64,
    pub collapsed: bool,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub spec: GanSpec,
    pub config: TrainConfig,
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub adam_g: AdamState<f32>,
    pub adam_d: AdamState<f32>,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<StepRecord>,
    pub collapse: Option<CollapseReport>,
    /// Collapse threshold in effect.
    pub tau: f64,
    pub restarts: usize,
    /// Seed of the current attempt (differs from the configured seed after a restart).
    pub run_seed: u64,
}

pub enum TrainEvent<'a> {
    Checkpoint(&'a TrainState),
    Restart {
        attempt: usize,
        seed: u64,
        report: CollapseReport,
    },
}

/// N(0, I) latent vectors for one step or sampling call.
pub fn latent_batch(seed: u64, label: &str, index: u64, n: usize, dim: usize) -> Tensor<f32> {
    let mut r = rng::stream(seed, label, index);
    normal_tensor(&[n, dim], 0.0, 1.0, &mut r)
}

impl TrainState {
    pub(super) fn fresh(spec: &GanSpec, config: &TrainConfig, run_seed: u64, tau: f64, restarts: usize) -> Result<Self> {
        let generator = Generator::new(spec, run_seed)?;
        let discriminator = Discriminator::new(spec, run_seed)?;
        Ok(TrainState {
            adam_g: AdamState::new(config.adam, &generator.params.params),
            adam_d: AdamState::new(config.adam, &discriminator.params.params),
            spec: spec.clone(),
            config: config.clone(),
            generator,
            discriminator,
            epoch: 0,
            history: Vec::new(),
            collapse: None,
            tau,
            restarts,
            run_seed,
        })
    }

    pub fn steps(&self) -> usize {
        self.history.len()
    }

    pub(super) fn step(&mut self, real: Tensor<f32>) -> Result<StepRecord> {
        let n = real.shape()[0];
        let step = self.history.len();
        let z = latent_batch(self.run_seed, "latent", step as u64, n, self.spec.latent_dim);

        let mut gg = Graph::new();
        let gvars = self.generator.bind(&mut gg, true);
        let zv = gg.constant(z);
        let fake = self.generator.forward(&mut gg, &gvars, zv, BnMode::Train)?;

        // discriminator update; real and fake go through separate passes
        let mut gd = Graph::new();
        let dvars = self.discriminator.bind(&mut gd, true);
        let rv = gd.constant(real);
        let fv = gd.constant(gg.value(fake).clone());
        let p_real = self.discriminator.forward(&mut gd, &dvars, rv, BnMode::Train)?;
        let p_fake = self.discriminator.forward(&mut gd, &dvars, fv, BnMode::Train)?;
        let ld = d_loss_node(&mut gd, p_real, p_fake, self.config.literal_d_loss)?;
        let mean_of = |t: &Tensor<f32>| t.data().iter().map(|&v| v as f64).sum::<f64>() / t.numel() as f64;
        let d_real_mean = mean_of(gd.value(p_real));
        let d_fake_mean = mean_of(gd.value(p_fake));
        let l_d = gd.value(ld).data()[0] as f64;
        gd.backward(ld)?;
        let dgrads = collect_grads(&mut gd, &dvars);
        self.check(step, "discriminator", l_d, &dgrads)?;
        self.adam_d.step(self.discriminator.params.params.iter_mut(), &dgrads)?;

        // generator update against the freshly updated discriminator
        let dconst = self.discriminator.bind(&mut gg, false);
        let p_gen = self.discriminator.forward(&mut gg, &dconst, fake, BnMode::Train)?;
        let lg = g_loss_node(&mut gg, p_gen);
        let l_g = gg.value(lg).data()[0] as f64;
        gg.backward(lg)?;
        let ggrads = collect_grads(&mut gg, &gvars);
        self.check(step, "generator", l_g, &ggrads)?;
        self.adam_g.step(self.generator.params.params.iter_mut(), &ggrads)?;

        Ok(StepRecord {
            step,
            epoch: self.epoch,
            l_d,
            l_g,
            d_real_mean,
            d_fake_mean,
        })
    }

    fn check(&self, step: usize, net: &str, loss: f64, grads: &[Tensor<f32>]) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "{net} loss is {loss} at step {step} (epoch {}, seed {})",
                self.epoch, self.run_seed
            )));
        }
        if let Some(i) = grads.iter().position(|g| g.validate().is_err()) {
            let names = if net == "generator" {
                &self.generator.params.names
            } else {
                &self.discriminator.params.names
            };
            return Err(Error::Numerical(format!(
                "non-finite gradient for {} at step {step} (epoch {})",
                names[i], self.epoch
            )));
        }
        Ok(())
    }

    /// Collapse check on freshly sampled generator output.
    pub fn collapse_report(&mut self) -> Result<CollapseReport> {
        let seed = rng::derive_seed(self.run_seed, "collapse-check", self.epoch as u64);
        let samples = sample(&mut self.generator, self.config.collapse_samples, seed)?;
        collapse_check(&samples, self.tau)
    }
}

fn collect_grads(g: &mut Graph<f32>, vars: &[crate::tensorcore::Var]) -> Vec<Tensor<f32>> {
    vars.iter()
        .map(|&v| {
            g.take_grad(v)
                .unwrap_or_else(|| Tensor::zeros(g.value(v).shape()))
        })
        .collect()
}

/// Train both networks on a scaled dataset. `on_event` sees every
/// checkpoint (at the configured cadence and after the last epoch) and
/// every collapse-triggered restart.
pub fn train(
    ds: &FieldDataset,
    spec: &GanSpec,
    config: &TrainConfig,
    mut on_event: impl FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<TrainState> {
    spec.validate()?;
    config.validate()?;
    let (h, w) = ds.require_non_empty()?;
    spec.check_resolution(h, w)?;
    if !ds.is_scaled() {
        return Err(Error::Data("training data must be min-max scaled".into()));
    }
    if config.steps_per_epoch(ds.len()) == 0 {
        return Err(Error::Data(format!(
            "{} sample(s) cannot fill a batch of at least 2",
            ds.len()
        )));
    }
    let tau = match config.collapse_tau {
        Some(t) => t,
        None => 0.1 * collapse_statistic(ds)?,
    };
    let data: Tensor<f32> = ds.to_tensor()?;
    let mut run_seed = config.seed;
    let mut restarts = 0;
    loop {
        let mut state = TrainState::fresh(spec, config, run_seed, tau, restarts)?;
        run_epochs(&mut state, &data, &mut on_event)?;
        let report = state.collapse.expect("final checkpoint sets the collapse report");
        if !report.collapsed || restarts >= config.max_restarts {
            if report.collapsed {
                warn!(
                    "generator collapsed (statistic {:.4} < {:.4}) and no restarts remain",
                    report.statistic, report.tau
                );
            }
            return Ok(state);
        }
        restarts += 1;
        run_seed = rng::derive_seed(config.seed, "restart", restarts as u64);
        warn!(
            "generator collapsed (statistic {:.4} < {:.4}); restart {restarts} with seed {run_seed}",
            report.statistic, report.tau
        );
        on_event(TrainEvent::Restart {
            attempt: restarts,
            seed: run_seed,
            report,
        })?;
    }
}

fn run_epochs(
    state: &mut TrainState,
    data: &Tensor<f32>,
    on_event: &mut impl FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<()> {
    let n = data.shape()[0];
    let per_sample = data.numel() / n;
    let mut sample_shape = data.shape().to_vec();
    let cfg = state.config.clone();
    let steps = cfg.steps_per_epoch(n);
    for epoch in 0..cfg.epochs {
        state.epoch = epoch;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(state.run_seed, "epoch-order", epoch as u64));
        for b in 0..steps {
            let idx = &order[b * cfg.batch_size..((b + 1) * cfg.batch_size).min(n)];
            let mut buf = Vec::with_capacity(idx.len() * per_sample);
            for &i in idx {
                buf.extend_from_slice(&data.data()[i * per_sample..(i + 1) * per_sample]);
            }
            sample_shape[0] = idx.len();
            let rec = state.step(Tensor::new(sample_shape.clone(), buf)?)?;
            state.history.push(rec);
        }
        state.epoch = epoch + 1;
        let last = epoch + 1 == cfg.epochs;
        let due = cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0;
        if last || due {
            state.collapse = Some(state.collapse_report()?);
            let rec = state.history.last().expect("at least one step per epoch");
            info!(
                "epoch {} step {} L_D {:.4} L_G {:.4}",
                state.epoch,
                state.history.len(),
                rec.l_d,
                rec.l_g
            );
            on_event(TrainEvent::Checkpoint(state))?;
        }
    }
    if cfg.epochs == 0 {
        state.collapse = Some(state.collapse_report()?);
        on_event(TrainEvent::Checkpoint(state))?;
    }
    Ok(())
}

/// `count` generator outputs for latents drawn from `seed`, as a scaled dataset.
pub fn sample(generator: &mut Generator<f32>, count: usize, seed: u64) -> Result<FieldDataset> {
    let r = generator.spec.resolution();
    let meta = DatasetMeta {
        specimen: "generated".into(),
        sigma_max_mpa: None,
        load_ratio: None,
        extent_mm: r as f64,
        source: DataSource::Generated,
        seed: Some(seed),
    };
    let dim = generator.spec.latent_dim;
    let mut fields = Vec::with_capacity(count);
    let mut start = 0;
    while start < count {
        let m = SAMPLE_CHUNK.min(count - start);
        let z = latent_batch(seed, "sample", (start / SAMPLE_CHUNK) as u64, m, dim);
        let out = generator.generate(&z, BnMode::Eval)?;
        out.validate()?;
        let chunk = FieldDataset::from_scaled_tensor(&out, 1.0, meta.clone())?;
        fields.extend(chunk.fields().iter().cloned());
        start += m;
    }
    FieldDataset::new(fields, meta)
}

/// Mean pairwise L2 distance between samples divided by √(H·W).
pub fn collapse_statistic(ds: &FieldDataset) -> Result<f64> {
    let (h, w) = ds.require_non_empty()?;
    let n = ds.len();
    if n < 2 {
        return Err(Error::Data("collapse statistic needs at least 2 samples".into()));
    }
    let flat: Vec<Vec<f64>> = (0..n).map(|i| ds.flat_sample(i)).collect();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d2: f64 = flat[i].iter().zip(&flat[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            total += d2.sqrt();
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(total / pairs / ((h * w) as f64).sqrt())
}

pub fn collapse_check(samples: &FieldDataset, tau: f64) -> Result<CollapseReport> {
    let statistic = collapse_statistic(samples)?;
    Ok(CollapseReport {
        statistic,
        tau,
        collapsed: statistic < tau,
    })
}
