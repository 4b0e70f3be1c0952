//! Generator and discriminator networks.

use rand::Rng;

use super::GanSpec;
use crate::error::{Error, Result};
use crate::rng;
use crate::strain::strain_feature;
use crate::tensorcore::{normal_tensor, Activation, BatchNormStats, BnMode, Graph, Scalar, Tensor, Var};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Named parameters plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    pub names: Vec<String>,
    pub params: Vec<Tensor<T>>,
    pub bn_names: Vec<String>,
    pub bn: Vec<BatchNormStats<T>>,
}

impl<T: Scalar> ParamSet<T> {
    fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            params: Vec::new(),
            bn_names: Vec::new(),
            bn: Vec::new(),
        }
    }

    fn push(&mut self, name: String, t: Tensor<T>) {
        self.names.push(name);
        self.params.push(t);
    }

    fn push_bn(&mut self, prefix: &str, channels: usize, std: f64, r: &mut impl Rng) {
        self.push(format!("{prefix}.weight"), normal_tensor(&[channels], 1.0, std, r));
        self.push(format!("{prefix}.bias"), Tensor::zeros(&[channels]));
        self.bn_names.push(prefix.to_string());
        self.bn.push(BatchNormStats::new(channels));
    }

    /// Put every parameter on `g`, as gradient leaves when `trainable`.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p.clone())
                } else {
                    g.constant(p.clone())
                }
            })
            .collect()
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
            bn_names: self.bn_names.clone(),
            bn: self
                .bn
                .iter()
                .map(|s| BatchNormStats {
                    running_mean: s.running_mean.iter().map(|v| U::of(v.f64())).collect(),
                    running_var: s.running_var.iter().map(|v| U::of(v.f64())).collect(),
                    momentum: s.momentum,
                    eps: s.eps,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (n, p) in self.names.iter().zip(&self.params) {
            p.validate().map_err(|e| Error::Numerical(format!("parameter {n}: {e}")))?;
        }
        Ok(())
    }
}

fn channels_at(base: usize, level: usize) -> usize {
    (base >> level).max(1)
}

/// Latent vector to N×2×R×R field in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    pub spec: GanSpec,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Generator<T> {
    pub fn new(spec: &GanSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut r = rng::stream(seed, "init-generator", 0);
        let (s, c, std) = (spec.base_grid, spec.base_channels, spec.init_std);
        let mut p = ParamSet::new();
        p.push("g.fc.weight".into(), normal_tensor(&[spec.latent_dim, s * s * c], 0.0, std, &mut r));
        p.push("g.fc.bias".into(), Tensor::zeros(&[s * s * c]));
        p.push_bn("g.bn0", c, std, &mut r);
        for i in 0..spec.up_blocks {
            let cin = channels_at(c, i);
            let cout = if i + 1 == spec.up_blocks { 2 } else { channels_at(c, i + 1) };
            p.push_bn(&format!("g.block{i}.bn"), cin, std, &mut r);
            p.push(
                format!("g.block{i}.conv.weight"),
                normal_tensor(&[cout, cin, 3, 3], 0.0, std, &mut r),
            );
            // earlier convs feed a batch norm, which cancels any bias
            if i + 1 == spec.up_blocks {
                p.push(format!("g.block{i}.conv.bias"), Tensor::zeros(&[cout]));
            }
        }
        Ok(Generator {
            spec: spec.clone(),
            params: p,
        })
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params.bind(g, trainable)
    }

    /// Forward pass of an N×latent input using already bound parameters.
    pub fn forward(&mut self, g: &mut Graph<T>, vars: &[Var], z: Var, mode: BnMode) -> Result<Var> {
        let spec = &self.spec;
        let n = g.value(z).shape()[0];
        let (s, c) = (spec.base_grid, spec.base_channels);
        let mut k = 0;
        let mut next = || {
            k += 1;
            vars[k - 1]
        };
        let h = g.linear(z, next(), next())?;
        let mut x = g.reshape(h, &[n, c, s, s])?;
        let (w, b) = (next(), next());
        x = g.batch_norm(x, w, b, mode, &mut self.params.bn[0])?;
        x = g.activation(x, Activation::Relu);
        for i in 0..spec.up_blocks {
            x = g.upsample_nearest2x(x)?;
            let (w, b) = (next(), next());
            x = g.batch_norm(x, w, b, mode, &mut self.params.bn[i + 1])?;
            x = g.activation(x, Activation::Relu);
            let kw = next();
            let kb = (i + 1 == spec.up_blocks).then(&mut next);
            x = g.conv2d(x, kw, kb, 1, 1)?;
        }
        Ok(g.activation(x, Activation::Tanh))
    }

    /// Inference-only convenience: outputs for the rows of `z`.
    pub fn generate(&mut self, z: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let zv = g.constant(z.clone());
        let out = self.forward(&mut g, &vars, zv, mode)?;
        Ok(g.value(out).clone())
    }
}

/// Field (plus strain channel when physics guided) to real-probability.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T> {
    pub spec: GanSpec,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(spec: &GanSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut r = rng::stream(seed, "init-discriminator", 0);
        let std = spec.init_std;
        let mut p = ParamSet::new();
        let mut cin = spec.disc_input_channels();
        for k in 0..spec.down_blocks {
            let cout = if k + 1 == spec.down_blocks { 1 } else { spec.disc_channels << k };
            p.push(
                format!("d.block{k}.conv.weight"),
                normal_tensor(&[cout, cin, 4, 4], 0.0, std, &mut r),
            );
            p.push_bn(&format!("d.block{k}.bn"), cout, std, &mut r);
            cin = cout;
        }
        let side = spec.resolution() >> spec.down_blocks;
        p.push("d.fc.weight".into(), normal_tensor(&[side * side, 1], 0.0, std, &mut r));
        p.push("d.fc.bias".into(), Tensor::zeros(&[1]));
        Ok(Discriminator {
            spec: spec.clone(),
            params: p,
        })
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params.bind(g, trainable)
    }

    /// N×1 probabilities for an N×2×R×R input.
    pub fn forward(&mut self, g: &mut Graph<T>, vars: &[Var], x: Var, mode: BnMode) -> Result<Var> {
        let spec = &self.spec;
        let shape = g.value(x).shape().to_vec();
        let r = spec.resolution();
        if shape.len() != 4 || shape[1] != 2 || shape[2] != r || shape[3] != r {
            return Err(Error::Shape(format!(
                "discriminator expects N×2×{r}×{r}, got {shape:?}"
            )));
        }
        let n = shape[0];
        let mut h = if spec.physics_guided {
            let s = strain_feature(g, x, &spec.vm)?;
            g.concat_channels(&[x, s])?
        } else {
            x
        };
        for k in 0..spec.down_blocks {
            let (kw, w, b) = (vars[3 * k], vars[3 * k + 1], vars[3 * k + 2]);
            h = g.conv2d(h, kw, None, 2, 1)?;
            h = g.batch_norm(h, w, b, mode, &mut self.params.bn[k])?;
            h = g.activation(h, Activation::LeakyRelu(LEAKY_SLOPE));
        }
        let side = r >> spec.down_blocks;
        let flat = g.reshape(h, &[n, side * side])?;
        let base = 3 * spec.down_blocks;
        let logit = g.linear(flat, vars[base], vars[base + 1])?;
        Ok(g.activation(logit, Activation::Sigmoid))
    }

    pub fn probabilities(&mut self, x: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &vars, xv, mode)?;
        Ok(g.value(out).clone())
    }
}
