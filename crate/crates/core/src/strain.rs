//! Small-strain kinematics on displacement grids: forward-difference strain
//! tensor, smoothed von Mises equivalent strain, and a differentiable
//! graph node producing the normalized strain channel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{DisplacementField, FieldDataset};
use crate::tensorcore::{CustomOp, Graph, Scalar, Tensor, Var};

const VM_FACTOR: f64 = 1.154_700_538_379_251_5; // 2 / sqrt(3)

/// Settings for the equivalent-strain computation. Volume constancy
/// (Poisson ratio one half) is built into the formula.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VmConfig {
    /// Smoothing added under the square root.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Grid step of the difference quotient.
    #[serde(default = "one")]
    pub h: f64,
    /// Symmetric shear ½(∂u_x/∂y + ∂u_y/∂x); `false` uses ∂u_x/∂y alone.
    #[serde(default = "yes")]
    pub symmetric: bool,
    /// Divisor applied to the strain channel seen by the discriminator.
    #[serde(default = "one")]
    pub strain_norm: f64,
}

fn default_delta() -> f64 {
    1e-8
}
fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}

impl Default for VmConfig {
    fn default() -> Self {
        VmConfig {
            delta: default_delta(),
            h: 1.0,
            symmetric: true,
            strain_norm: 1.0,
        }
    }
}

impl VmConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.delta) {
            return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
        }
        if !pos(self.h) {
            return Err(Error::Config(format!("grid step h must be positive, got {}", self.h)));
        }
        if !pos(self.strain_norm) {
            return Err(Error::Config(format!("strain_norm must be positive, got {}", self.strain_norm)));
        }
        Ok(())
    }

    /// ε_vm of an all-zero strain state.
    pub fn floor(&self) -> f64 {
        VM_FACTOR * self.delta.sqrt()
    }
}

/// In-plane strain components on the source grid.
#[derive(Clone, Debug, PartialEq)]
pub struct StrainFields {
    pub height: usize,
    pub width: usize,
    pub exx: Vec<f64>,
    pub eyy: Vec<f64>,
    pub exy: Vec<f64>,
    pub h: f64,
    pub symmetric: bool,
}

/// Forward difference along x (columns); the last column repeats its
/// predecessor.
fn diff_x<T: Scalar>(f: &[T], h: usize, w: usize, inv_step: T, out: &mut [T]) {
    for i in 0..h {
        let row = &f[i * w..(i + 1) * w];
        let o = &mut out[i * w..(i + 1) * w];
        for j in 0..w - 1 {
            o[j] = (row[j + 1] - row[j]) * inv_step;
        }
        o[w - 1] = o[w - 2];
    }
}

fn diff_y<T: Scalar>(f: &[T], h: usize, w: usize, inv_step: T, out: &mut [T]) {
    for i in 0..h - 1 {
        for j in 0..w {
            out[i * w + j] = (f[(i + 1) * w + j] - f[i * w + j]) * inv_step;
        }
    }
    let (head, tail) = out.split_at_mut((h - 1) * w);
    tail.copy_from_slice(&head[(h - 2) * w..]);
}

/// Adjoint of [`diff_x`]: accumulates `g`'s pullback into `acc`.
fn diff_x_adjoint<T: Scalar>(g: &[T], h: usize, w: usize, inv_step: T, acc: &mut [T]) {
    for i in 0..h {
        for j in 0..w {
            let jj = j.min(w - 2);
            let v = g[i * w + j] * inv_step;
            acc[i * w + jj + 1] += v;
            acc[i * w + jj] -= v;
        }
    }
}

fn diff_y_adjoint<T: Scalar>(g: &[T], h: usize, w: usize, inv_step: T, acc: &mut [T]) {
    for i in 0..h {
        let ii = i.min(h - 2);
        for j in 0..w {
            let v = g[i * w + j] * inv_step;
            acc[(ii + 1) * w + j] += v;
            acc[ii * w + j] -= v;
        }
    }
}

fn check_grid(h: usize, w: usize) -> Result<()> {
    if h < 2 || w < 2 {
        return Err(Error::Shape(format!(
            "strain needs at least a 2x2 grid, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Strains of one plane pair (ux, uy), written into the three outputs.
fn plane_strains<T: Scalar>(
    ux: &[T],
    uy: &[T],
    h: usize,
    w: usize,
    cfg: &VmConfig,
    exx: &mut [T],
    eyy: &mut [T],
    exy: &mut [T],
) {
    let inv = T::of(1.0 / cfg.h);
    diff_x(ux, h, w, inv, exx);
    diff_y(uy, h, w, inv, eyy);
    diff_y(ux, h, w, inv, exy);
    if cfg.symmetric {
        let mut tmp = vec![T::zero(); h * w];
        diff_x(uy, h, w, inv, &mut tmp);
        let half = T::of(0.5);
        for (s, t) in exy.iter_mut().zip(&tmp) {
            *s = half * (*s + *t);
        }
    }
}

pub fn strain_fields(field: &DisplacementField, cfg: &VmConfig) -> Result<StrainFields> {
    cfg.validate()?;
    let (h, w) = (field.height(), field.width());
    check_grid(h, w)?;
    let n = h * w;
    let (mut exx, mut eyy, mut exy) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    plane_strains(field.ux(), field.uy(), h, w, cfg, &mut exx, &mut eyy, &mut exy);
    Ok(StrainFields {
        height: h,
        width: w,
        exx,
        eyy,
        exy,
        h: cfg.h,
        symmetric: cfg.symmetric,
    })
}

#[inline]
fn vm_point<T: Scalar>(exx: T, eyy: T, exy: T, delta: T) -> T {
    T::of(VM_FACTOR) * (exx * exx + eyy * eyy + exy * exy + exx * eyy + delta).sqrt()
}

/// Smoothed von Mises equivalent strain, point-wise.
pub fn von_mises(strains: &StrainFields, cfg: &VmConfig) -> Vec<f64> {
    strains
        .exx
        .iter()
        .zip(&strains.eyy)
        .zip(&strains.exy)
        .map(|((&a, &b), &c)| vm_point(a, b, c, cfg.delta))
        .collect()
}

/// ε_vm / strain_norm for every sample of an N×2×H×W tensor, as N×1×H×W.
pub fn strain_feature_tensor<T: Scalar>(x: &Tensor<T>, cfg: &VmConfig) -> Result<Tensor<T>> {
    cfg.validate()?;
    let [n, c, h, w] = x.dims4("strain input")?;
    if c != 2 {
        return Err(Error::Shape(format!("strain input needs 2 channels, got {c}")));
    }
    check_grid(h, w)?;
    let hw = h * w;
    let mut out = vec![T::zero(); n * hw];
    let (mut exx, mut eyy, mut exy) = (vec![T::zero(); hw], vec![T::zero(); hw], vec![T::zero(); hw]);
    let (delta, inv_norm) = (T::of(cfg.delta), T::of(1.0 / cfg.strain_norm));
    for s in 0..n {
        let base = &x.data()[s * 2 * hw..(s + 1) * 2 * hw];
        plane_strains(&base[..hw], &base[hw..], h, w, cfg, &mut exx, &mut eyy, &mut exy);
        for (k, o) in out[s * hw..(s + 1) * hw].iter_mut().enumerate() {
            *o = vm_point(exx[k], eyy[k], exy[k], delta) * inv_norm;
        }
    }
    Tensor::new(vec![n, 1, h, w], out)
}

struct StrainFeatureOp {
    cfg: VmConfig,
}

impl<T: Scalar> CustomOp<T> for StrainFeatureOp {
    fn name(&self) -> &'static str {
        "strain_feature"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_output: &Tensor<T>,
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let x = inputs[0];
        let [n, _, h, w] = x.dims4("strain input")?;
        let hw = h * w;
        let cfg = &self.cfg;
        let inv = T::of(1.0 / cfg.h);
        let norm = T::of(cfg.strain_norm);
        // d(out)/dq = c^2 / (2 * vm * norm) with vm = out * norm
        let c2_half = T::of(VM_FACTOR * VM_FACTOR / 2.0);
        let two = T::of(2.0);
        let mut dx = vec![T::zero(); x.numel()];
        let (mut exx, mut eyy, mut exy) = (vec![T::zero(); hw], vec![T::zero(); hw], vec![T::zero(); hw]);
        let (mut gxx, mut gyy, mut gxy) = (vec![T::zero(); hw], vec![T::zero(); hw], vec![T::zero(); hw]);
        for s in 0..n {
            let base = &x.data()[s * 2 * hw..(s + 1) * 2 * hw];
            plane_strains(&base[..hw], &base[hw..], h, w, cfg, &mut exx, &mut eyy, &mut exy);
            let out = &output.data()[s * hw..(s + 1) * hw];
            let go = &grad_output.data()[s * hw..(s + 1) * hw];
            for k in 0..hw {
                let vm = out[k] * norm;
                let dq = go[k] * c2_half / (vm * norm);
                gxx[k] = dq * (two * exx[k] + eyy[k]);
                gyy[k] = dq * (two * eyy[k] + exx[k]);
                gxy[k] = dq * two * exy[k];
            }
            let (gux, guy) = dx[s * 2 * hw..(s + 1) * 2 * hw].split_at_mut(hw);
            diff_x_adjoint(&gxx, h, w, inv, gux);
            diff_y_adjoint(&gyy, h, w, inv, guy);
            if cfg.symmetric {
                for g in gxy.iter_mut() {
                    *g = *g * T::of(0.5);
                }
                diff_y_adjoint(&gxy, h, w, inv, gux);
                diff_x_adjoint(&gxy, h, w, inv, guy);
            } else {
                diff_y_adjoint(&gxy, h, w, inv, gux);
            }
        }
        Ok(vec![Some(Tensor::new(x.shape().to_vec(), dx)?)])
    }
}

/// Graph node for the normalized strain channel of an N×2×H×W input.
pub fn strain_feature<T: Scalar>(g: &mut Graph<T>, x: Var, cfg: &VmConfig) -> Result<Var> {
    let out = strain_feature_tensor(g.value(x), cfg)?;
    Ok(g.custom(&[x], out, Box::new(StrainFeatureOp { cfg: *cfg })))
}

/// Linear-interpolation quantile (`q` in [0, 1]) of unsorted data.
pub fn quantile(values: &mut [f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Data("quantile of an empty set".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Config(format!("quantile level {q} outside [0, 1]")));
    }
    values.sort_by(f64::total_cmp);
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(values.len() - 1);
    let t = pos - lo as f64;
    Ok(values[lo] + t * (values[hi] - values[lo]))
}

pub const STRAIN_NORM_QUANTILE: f64 = 0.995;

/// 99.5th percentile of ε_vm over every pixel of every sample.
pub fn calibrate_strain_norm(ds: &FieldDataset, cfg: &VmConfig) -> Result<f64> {
    ds.require_non_empty()?;
    let mut all = Vec::new();
    for f in ds.fields() {
        all.extend(von_mises(&strain_fields(f, cfg)?, cfg));
    }
    quantile(&mut all, STRAIN_NORM_QUANTILE)
}

#[cfg(test)]
mod tests;
