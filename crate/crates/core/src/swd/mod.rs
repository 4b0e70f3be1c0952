//! Multi-scale sliced Wasserstein distance between field datasets:
//! Laplacian pyramid, random 7×7 patch descriptors, random 1-D projections.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::FieldDataset;
use crate::rng;
use crate::tensorcore::matmul;

pub const PATCH: usize = 7;
pub const COARSEST: usize = 16;
/// Patches drawn at the 16×16 level; finer levels scale proportionally.
pub const BASE_PATCHES: usize = 128;
/// Reported distances are multiplied by this factor.
pub const REPORT_SCALE: f64 = 1e3;

const KERNEL: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Stack of N×C×r×r levels, finest first. All but the last are band-pass;
/// the last is the low-pass residual.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianPyramid {
    pub count: usize,
    pub channels: usize,
    pub levels: Vec<Level>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Level {
    pub size: usize,
    /// N×C×size×size, row-major.
    pub data: Vec<f32>,
}

fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r.clamp(0, n - 1) as usize
}

/// Separable 5-tap smoothing of every size×size plane, mirrored borders.
fn smooth(planes: &[f32], size: usize, gain: f32) -> Vec<f32> {
    let taps: Vec<f32> = KERNEL.iter().map(|k| k * gain).collect();
    let mut tmp = vec![0f32; planes.len()];
    let mut out = vec![0f32; planes.len()];
    for (src, dst) in planes.chunks(size * size).zip(tmp.chunks_mut(size * size)) {
        for i in 0..size {
            for j in 0..size {
                let mut acc = 0f32;
                for (t, k) in taps.iter().enumerate() {
                    acc += k * src[i * size + mirror(j as isize + t as isize - 2, size)];
                }
                dst[i * size + j] = acc;
            }
        }
    }
    for (src, dst) in tmp.chunks(size * size).zip(out.chunks_mut(size * size)) {
        for i in 0..size {
            for j in 0..size {
                let mut acc = 0f32;
                for (t, k) in taps.iter().enumerate() {
                    acc += k * src[mirror(i as isize + t as isize - 2, size) * size + j];
                }
                dst[i * size + j] = acc;
            }
        }
    }
    out
}

/// Smooth, then keep every second row and column.
pub fn pyr_down(planes: &[f32], size: usize) -> Vec<f32> {
    let s = smooth(planes, size, 1.0);
    let half = size / 2;
    let mut out = Vec::with_capacity(planes.len() / 4);
    for p in s.chunks(size * size) {
        for i in 0..half {
            for j in 0..half {
                out.push(p[2 * i * size + 2 * j]);
            }
        }
    }
    out
}

/// Zero insertion to double size, then smoothing with gain 4.
pub fn pyr_up(planes: &[f32], size: usize) -> Vec<f32> {
    let big = 2 * size;
    let mut z = vec![0f32; planes.len() * 4];
    for (src, dst) in planes.chunks(size * size).zip(z.chunks_mut(big * big)) {
        for i in 0..size {
            for j in 0..size {
                dst[2 * i * big + 2 * j] = src[i * size + j];
            }
        }
    }
    // gain 2 per axis gives 4 overall
    smooth(&z, big, 2.0)
}

/// Number of pyramid levels for a given resolution, if it is 16·2^k.
pub fn levels_for(resolution: usize) -> Option<usize> {
    if resolution >= COARSEST && resolution % COARSEST == 0 && (resolution / COARSEST).is_power_of_two() {
        Some((resolution / COARSEST).trailing_zeros() as usize + 1)
    } else {
        None
    }
}

pub fn laplacian_pyramid(ds: &FieldDataset, levels: usize) -> Result<LaplacianPyramid> {
    let (h, w) = ds.require_non_empty()?;
    if levels == 0 {
        return Err(Error::Config("pyramid needs at least one level".into()));
    }
    let expected = COARSEST << (levels - 1);
    if h != w || h != expected {
        return Err(Error::Config(format!(
            "a {levels}-level pyramid needs {expected}x{expected} fields, got {h}x{w}"
        )));
    }
    let mut cur: Vec<f32> = Vec::with_capacity(ds.len() * 2 * h * w);
    for f in ds.fields() {
        cur.extend(f.ux().iter().chain(f.uy()).map(|&v| v as f32));
    }
    let mut size = h;
    let mut out = Vec::with_capacity(levels);
    for _ in 0..levels - 1 {
        let down = pyr_down(&cur, size);
        let up = pyr_up(&down, size / 2);
        let band: Vec<f32> = cur.iter().zip(&up).map(|(a, b)| a - b).collect();
        out.push(Level { size, data: band });
        cur = down;
        size /= 2;
    }
    out.push(Level { size, data: cur });
    Ok(LaplacianPyramid {
        count: ds.len(),
        channels: 2,
        levels: out,
    })
}

impl LaplacianPyramid {
    /// Upsample-and-add from the residual back to full resolution.
    pub fn reconstruct(&self) -> Vec<f32> {
        let last = self.levels.last().expect("pyramid has levels");
        let mut acc = last.data.clone();
        let mut size = last.size;
        for lvl in self.levels.iter().rev().skip(1) {
            acc = pyr_up(&acc, size).iter().zip(&lvl.data).map(|(a, b)| a + b).collect();
            size *= 2;
        }
        acc
    }
}

/// Normalized patch vectors of one pyramid level.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchDescriptorSet {
    pub level: usize,
    pub count: usize,
    pub dim: usize,
    /// count × dim, row-major; each row is channel-major C×7×7.
    pub data: Vec<f64>,
    pub channel_mean: Vec<f64>,
    pub channel_std: Vec<f64>,
}

/// `count` random 7×7 patches (uniform sample and position), normalized
/// per channel over the whole set. A channel with zero spread is zeroed.
pub fn extract_patches(
    level: &Level,
    samples: usize,
    channels: usize,
    count: usize,
    seed: u64,
    level_id: usize,
) -> Result<PatchDescriptorSet> {
    let r = level.size;
    if r < PATCH {
        return Err(Error::Config(format!("level extent {r} is smaller than the {PATCH}x{PATCH} patch")));
    }
    if samples == 0 || level.data.len() != samples * channels * r * r {
        return Err(Error::Shape(format!(
            "level data holds {} values, expected {samples}x{channels}x{r}x{r}",
            level.data.len()
        )));
    }
    let mut g = rng::stream(seed, "swd-patches", level_id as u64);
    let pp = PATCH * PATCH;
    let dim = channels * pp;
    let mut data = Vec::with_capacity(count * dim);
    for _ in 0..count {
        let n = g.random_range(0..samples);
        let y = g.random_range(0..=r - PATCH);
        let x = g.random_range(0..=r - PATCH);
        for c in 0..channels {
            let plane = &level.data[(n * channels + c) * r * r..(n * channels + c + 1) * r * r];
            for i in 0..PATCH {
                data.extend(plane[(y + i) * r + x..(y + i) * r + x + PATCH].iter().map(|&v| v as f64));
            }
        }
    }
    let mut mean = vec![0.0; channels];
    let mut std = vec![0.0; channels];
    let m = (count * pp) as f64;
    for c in 0..channels {
        let vals = || data.chunks(dim).flat_map(move |row| row[c * pp..(c + 1) * pp].iter());
        let mu = vals().sum::<f64>() / m;
        let var = vals().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m;
        mean[c] = mu;
        std[c] = var.sqrt();
    }
    for row in data.chunks_mut(dim) {
        for c in 0..channels {
            for v in &mut row[c * pp..(c + 1) * pp] {
                *v = if std[c] > 0.0 { (*v - mean[c]) / std[c] } else { 0.0 };
            }
        }
    }
    Ok(PatchDescriptorSet {
        level: level_id,
        count,
        dim,
        data,
        channel_mean: mean,
        channel_std: std,
    })
}

/// `n` random unit directions in `dim` dimensions, one per row.
pub fn random_directions(n: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut g = rng::stream(seed, "swd-slices", 0);
    let mut out = Vec::with_capacity(n * dim);
    for _ in 0..n {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut g)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                out.extend(v.iter().map(|x| x / norm));
                break;
            }
        }
    }
    out
}

/// √(mean over directions of the mean squared difference between sorted
/// projections). Directions are rows of `dirs` (n_dirs × dim).
pub fn sliced_wasserstein_with(x: &[f64], y: &[f64], count: usize, dim: usize, dirs: &[f64]) -> Result<f64> {
    if x.len() != count * dim || y.len() != count * dim {
        return Err(Error::Shape(format!(
            "descriptor sets must both be {count}x{dim}, got {} and {} values",
            x.len(),
            y.len()
        )));
    }
    if count == 0 || dirs.is_empty() || dirs.len() % dim != 0 {
        return Err(Error::Shape("sliced Wasserstein needs descriptors and directions".into()));
    }
    let s = dirs.len() / dim;
    let project = |d: &[f64]| {
        let mut p = vec![0.0; count * s];
        matmul(count, dim, s, d, false, dirs, true, &mut p, false);
        // column-major copy so each slice sorts contiguously
        let mut cols = vec![0.0; count * s];
        for i in 0..count {
            for j in 0..s {
                cols[j * count + i] = p[i * s + j];
            }
        }
        for c in cols.chunks_mut(count) {
            c.sort_by(f64::total_cmp);
        }
        cols
    };
    let (px, py) = (project(x), project(y));
    let total: f64 = px.iter().zip(&py).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((total / (count * s) as f64).sqrt())
}

pub fn sliced_wasserstein(x: &PatchDescriptorSet, y: &PatchDescriptorSet, n_slices: usize, seed: u64) -> Result<f64> {
    if x.count != y.count || x.dim != y.dim {
        return Err(Error::Shape(format!(
            "descriptor sets differ: {}x{} vs {}x{}",
            x.count, x.dim, y.count, y.dim
        )));
    }
    let dirs = random_directions(n_slices, x.dim, seed);
    sliced_wasserstein_with(&x.data, &y.data, x.count, x.dim, &dirs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwdConfig {
    pub repetitions: usize,
    pub n_slices: usize,
    /// Patch count at the 16×16 level.
    pub base_patches: usize,
    pub seed: u64,
}

impl Default for SwdConfig {
    fn default() -> Self {
        SwdConfig {
            repetitions: 10,
            n_slices: 512,
            base_patches: BASE_PATCHES,
            seed: 0,
        }
    }
}

impl SwdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 || self.n_slices == 0 || self.base_patches == 0 {
            return Err(Error::Config(
                "repetitions, n_slices and base_patches must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn patches_at(&self, size: usize) -> usize {
        self.base_patches * size / COARSEST
    }
}

/// Per-level distances (×10³), finest level first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwdReport {
    pub resolutions: Vec<usize>,
    pub patch_counts: Vec<usize>,
    pub per_level: Vec<f64>,
    pub mean: f64,
    /// repetitions × levels, ×10³.
    pub repetitions: Vec<Vec<f64>>,
    pub n_slices: usize,
    pub seed: u64,
}

/// SWD averaged over repetitions; `fake_for` supplies the fake set of each
/// repetition (fresh generator samples or the same fixed dataset).
pub fn swd_protocol_with(
    real: &FieldDataset,
    mut fake_for: impl FnMut(usize) -> Result<FieldDataset>,
    cfg: &SwdConfig,
) -> Result<SwdReport> {
    cfg.validate()?;
    let (h, w) = real.require_non_empty()?;
    let levels = levels_for(h).filter(|_| h == w).ok_or_else(|| {
        Error::Config(format!("SWD needs square fields of side 16·2^k, got {h}x{w}"))
    })?;
    let real_pyr = laplacian_pyramid(real, levels)?;
    let mut fixed: Option<(FieldDataset, LaplacianPyramid)> = None;
    let resolutions: Vec<usize> = real_pyr.levels.iter().map(|l| l.size).collect();
    let patch_counts: Vec<usize> = resolutions.iter().map(|&r| cfg.patches_at(r)).collect();
    let mut reps = Vec::with_capacity(cfg.repetitions);
    for rep in 0..cfg.repetitions {
        let fake = fake_for(rep)?;
        if fake.grid() != Some((h, w)) {
            return Err(Error::Config(format!(
                "fake fields are {:?}, real fields are {h}x{w}",
                fake.grid()
            )));
        }
        let reuse = matches!(&fixed, Some((f, _)) if *f == fake);
        if !reuse {
            let p = laplacian_pyramid(&fake, levels)?;
            fixed = Some((fake, p));
        }
        let fake_pyr = &fixed.as_ref().expect("set above").1;
        let rep_seed = rng::derive_seed(cfg.seed, "swd-rep", rep as u64);
        let mut row = Vec::with_capacity(levels);
        for (l, (lr, lf)) in real_pyr.levels.iter().zip(&fake_pyr.levels).enumerate() {
            // real and fake share patch positions; the data differ
            let patch_seed = rng::derive_seed(rep_seed, "patches", l as u64);
            let xr = extract_patches(lr, real_pyr.count, 2, patch_counts[l], patch_seed, l)?;
            let xf = extract_patches(lf, fake_pyr.count, 2, patch_counts[l], patch_seed, l)?;
            let slice_seed = rng::derive_seed(rep_seed, "slices", l as u64);
            row.push(REPORT_SCALE * sliced_wasserstein(&xr, &xf, cfg.n_slices, slice_seed)?);
        }
        reps.push(row);
    }
    let per_level: Vec<f64> = (0..levels)
        .map(|l| reps.iter().map(|r| r[l]).sum::<f64>() / reps.len() as f64)
        .collect();
    let mean = per_level.iter().sum::<f64>() / levels as f64;
    Ok(SwdReport {
        resolutions,
        patch_counts,
        per_level,
        mean,
        repetitions: reps,
        n_slices: cfg.n_slices,
        seed: cfg.seed,
    })
}

/// SWD against a fixed fake dataset; repetitions redraw patches and slices.
pub fn swd_protocol(real: &FieldDataset, fake: &FieldDataset, cfg: &SwdConfig) -> Result<SwdReport> {
    swd_protocol_with(real, |_| Ok(fake.clone()), cfg)
}
