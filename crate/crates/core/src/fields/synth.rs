//! Desk-scale synthetic corpus built from the mode-I crack-tip field.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DataSource, DatasetMeta, DisplacementField, FieldDataset};
use crate::error::{Error, Result};
use crate::rng;

const BIAS_TERMS: usize = 3;
const BIAS_MAX_CYCLES: f64 = 1.5;

/// Parameters of one synthetic field. `a` and `y0` are fractions of the
/// region extent; the crack runs from the tip towards negative x.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthFieldSpec {
    pub size: usize,
    #[serde(default = "default_extent")]
    pub extent_mm: f64,
    pub a: f64,
    #[serde(default = "half")]
    pub y0: f64,
    pub k: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "one")]
    pub mu: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub bias_amplitude: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_extent() -> f64 {
    70.0
}
fn half() -> f64 {
    0.5
}
fn default_nu() -> f64 {
    0.3
}
fn one() -> f64 {
    1.0
}

impl SynthFieldSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.size == 0 {
            return bad("synthetic grid size must be positive".into());
        }
        if !(self.extent_mm > 0.0 && self.extent_mm.is_finite()) {
            return bad(format!("extent_mm must be positive, got {}", self.extent_mm));
        }
        if !(self.a > 0.0 && self.a < 1.0) {
            return bad(format!("crack tip abscissa must lie in (0,1), got {}", self.a));
        }
        if !(0.0..=1.0).contains(&self.y0) {
            return bad(format!("crack line ordinate must lie in [0,1], got {}", self.y0));
        }
        if !(self.nu > -1.0 && self.nu <= 0.5) {
            return bad(format!("Poisson ratio must lie in (-1, 0.5], got {}", self.nu));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad(format!("shear modulus must be positive, got {}", self.mu));
        }
        if !self.k.is_finite() {
            return bad("intensity factor must be finite".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise sigma must be >= 0, got {}", self.noise_sigma));
        }
        if !(self.bias_amplitude >= 0.0 && self.bias_amplitude.is_finite()) {
            return bad(format!("bias amplitude must be >= 0, got {}", self.bias_amplitude));
        }
        Ok(())
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.extent_mm / self.size as f64
    }

    /// Physical position (mm) of pixel centre (row, col).
    pub fn position(&self, row: usize, col: usize) -> (f64, f64) {
        let p = self.pixel_pitch();
        ((col as f64 + 0.5) * p, (row as f64 + 0.5) * p)
    }

    pub fn tip(&self) -> (f64, f64) {
        (self.a * self.extent_mm, self.y0 * self.extent_mm)
    }
}

/// Plane-stress mode-I displacement at offset (dx, dy) from the crack tip.
pub fn mode1_displacement(k: f64, nu: f64, mu: f64, dx: f64, dy: f64) -> (f64, f64) {
    let kappa = (3.0 - nu) / (1.0 + nu);
    let r = dx.hypot(dy);
    let theta = dy.atan2(dx);
    let (s, c) = (theta / 2.0).sin_cos();
    let amp = k / (2.0 * mu) * (r / (2.0 * PI)).sqrt();
    (
        amp * c * ((kappa - 1.0) / 2.0 + s * s),
        amp * s * ((kappa + 1.0) / 2.0 - c * c),
    )
}

struct CosTerm {
    weight: f64,
    fx: f64,
    fy: f64,
    phase: f64,
}

pub fn synth_mode1_field(spec: &SynthFieldSpec) -> Result<DisplacementField> {
    spec.validate()?;
    let n = spec.size;
    let mut r = rng::stream(spec.seed, "synth-field", 0);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let bias = |r: &mut rng::Rng| -> Vec<CosTerm> {
        let raw: Vec<f64> = (0..BIAS_TERMS).map(|_| r.random_range(-1.0..1.0)).collect();
        let norm: f64 = raw.iter().map(|w| w.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
        raw.into_iter()
            .map(|w| CosTerm {
                weight: spec.bias_amplitude * w / norm,
                fx: r.random_range(0.0..BIAS_MAX_CYCLES),
                fy: r.random_range(0.0..BIAS_MAX_CYCLES),
                phase: r.random_range(0.0..2.0 * PI),
            })
            .collect()
    };
    let bias_x = bias(&mut r);
    let bias_y = bias(&mut r);
    let eval_bias = |terms: &[CosTerm], x: f64, y: f64| -> f64 {
        terms
            .iter()
            .map(|t| t.weight * (2.0 * PI * (t.fx * x + t.fy * y) / spec.extent_mm + t.phase).cos())
            .sum()
    };

    let (tx, ty) = spec.tip();
    let mut ux = Vec::with_capacity(n * n);
    let mut uy = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let (x, y) = spec.position(i, j);
            let (mut a, mut b) = mode1_displacement(spec.k, spec.nu, spec.mu, x - tx, y - ty);
            if spec.bias_amplitude > 0.0 {
                a += eval_bias(&bias_x, x, y);
                b += eval_bias(&bias_y, x, y);
            }
            if spec.noise_sigma > 0.0 {
                a += spec.noise_sigma * normal.sample(&mut r);
                b += spec.noise_sigma * normal.sample(&mut r);
            }
            ux.push(a);
            uy.push(b);
        }
    }
    DisplacementField::new(n, n, ux, uy, spec.pixel_pitch())
}

/// A corpus of fields whose crack geometry and intensity are drawn
/// uniformly from the given ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthCorpusSpec {
    pub count: usize,
    pub size: usize,
    #[serde(default = "default_extent")]
    pub extent_mm: f64,
    #[serde(default = "default_a_range")]
    pub a_range: [f64; 2],
    #[serde(default = "default_y0_range")]
    pub y0_range: [f64; 2],
    #[serde(default = "default_k_range")]
    pub k_range: [f64; 2],
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "one")]
    pub mu: f64,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default = "default_bias")]
    pub bias_amplitude: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_specimen")]
    pub specimen: String,
}

fn default_a_range() -> [f64; 2] {
    [0.3, 0.7]
}
fn default_y0_range() -> [f64; 2] {
    [0.35, 0.65]
}
fn default_k_range() -> [f64; 2] {
    [0.5, 1.5]
}
fn default_noise() -> f64 {
    0.01
}
fn default_bias() -> f64 {
    0.05
}
fn default_specimen() -> String {
    "synthetic mode-I crack".into()
}

impl SynthCorpusSpec {
    pub fn new(count: usize, size: usize, seed: u64) -> Self {
        SynthCorpusSpec {
            count,
            size,
            extent_mm: default_extent(),
            a_range: default_a_range(),
            y0_range: default_y0_range(),
            k_range: default_k_range(),
            nu: default_nu(),
            mu: one(),
            noise_sigma: default_noise(),
            bias_amplitude: default_bias(),
            seed,
            specimen: default_specimen(),
        }
    }

    fn draw(range: [f64; 2], r: &mut rng::Rng) -> f64 {
        if range[0] == range[1] {
            range[0]
        } else {
            r.random_range(range[0]..range[1])
        }
    }

    /// Field spec of sample `i`; a function of (seed, i) only.
    pub fn sample_spec(&self, i: usize) -> SynthFieldSpec {
        let mut r = rng::stream(self.seed, "synth-sample", i as u64);
        let a = Self::draw(self.a_range, &mut r);
        let y0 = Self::draw(self.y0_range, &mut r);
        let k = Self::draw(self.k_range, &mut r);
        SynthFieldSpec {
            size: self.size,
            extent_mm: self.extent_mm,
            a,
            y0,
            k,
            nu: self.nu,
            mu: self.mu,
            noise_sigma: self.noise_sigma,
            bias_amplitude: self.bias_amplitude,
            seed: r.random(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("synthetic corpus count must be positive".into()));
        }
        for (name, rg) in [("a_range", self.a_range), ("y0_range", self.y0_range), ("k_range", self.k_range)] {
            if !(rg[0] <= rg[1]) {
                return Err(Error::Config(format!("{name} must satisfy lo <= hi, got {rg:?}")));
            }
        }
        // endpoints bound every drawn value, so checking them suffices
        for (a, y0, k) in [
            (self.a_range[0], self.y0_range[0], self.k_range[0]),
            (self.a_range[1], self.y0_range[1], self.k_range[1]),
        ] {
            SynthFieldSpec {
                size: self.size,
                extent_mm: self.extent_mm,
                a,
                y0,
                k,
                nu: self.nu,
                mu: self.mu,
                noise_sigma: self.noise_sigma,
                bias_amplitude: self.bias_amplitude,
                seed: 0,
            }
            .validate()?;
        }
        Ok(())
    }
}

/// Unscaled synthetic dataset.
pub fn synth_corpus(spec: &SynthCorpusSpec) -> Result<FieldDataset> {
    spec.validate()?;
    let fields = (0..spec.count)
        .map(|i| synth_mode1_field(&spec.sample_spec(i)))
        .collect::<Result<Vec<_>>>()?;
    let meta = DatasetMeta {
        specimen: spec.specimen.clone(),
        sigma_max_mpa: None,
        load_ratio: None,
        extent_mm: spec.extent_mm,
        source: DataSource::Synthetic,
        seed: Some(spec.seed),
    };
    FieldDataset::new(fields, meta)
}
