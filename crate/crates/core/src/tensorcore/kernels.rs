//! Forward and backward kernels on raw row-major buffers.

use super::tensor::{matmul, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn cols_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

impl ConvGeom {
    /// Output columns `lo..hi` whose input column for tap `kx` is in range.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = self.pad.saturating_sub(kx).div_ceil(s).min(self.ow);
        let hi = (self.w + self.pad).saturating_sub(kx).div_ceil(s).min(self.ow);
        (lo, hi.max(lo))
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.positions();
    let s = g.stride;
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_cols(kx);
                for oy in 0..g.oh {
                    let iy = (oy * s + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    let start = lo * s + kx - g.pad;
                    if s == 1 {
                        line[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (v, &x) in line[lo..hi].iter_mut().zip(src[start..].iter().step_by(s)) {
                            *v = x;
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.positions();
    let s = g.stride;
    for ci in 0..g.c {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_cols(kx);
                if lo == hi {
                    continue;
                }
                for oy in 0..g.oh {
                    let iy = (oy * s + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let start = lo * s + kx - g.pad;
                    let line = &src[oy * g.ow + lo..oy * g.ow + hi];
                    for (d, &v) in dst[start..].iter_mut().step_by(s).zip(line) {
                        *d += v;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(
    x: &[T],
    k: &[T],
    bias: Option<&[T]>,
    g: &ConvGeom,
) -> Vec<T> {
    let (rows, p) = (g.cols_rows(), g.positions());
    let mut cols = vec![T::zero(); rows * p];
    let mut out = vec![T::zero(); g.n * g.o * p];
    for ni in 0..g.n {
        im2col(&x[ni * g.c * g.h * g.w..(ni + 1) * g.c * g.h * g.w], g, &mut cols);
        let dst = &mut out[ni * g.o * p..(ni + 1) * g.o * p];
        matmul(g.o, rows, p, k, false, &cols, false, dst, false);
        if let Some(b) = bias {
            for (oc, chunk) in dst.chunks_mut(p).enumerate() {
                chunk.iter_mut().for_each(|v| *v += b[oc]);
            }
        }
    }
    out
}

/// Returns (dx if requested, dk, dbias if requested).
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    k: &[T],
    dy: &[T],
    g: &ConvGeom,
    need_dx: bool,
    need_dk: bool,
    need_db: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let (rows, p) = (g.cols_rows(), g.positions());
    let chw = g.c * g.h * g.w;
    let mut cols = vec![T::zero(); rows * p];
    let mut dx = need_dx.then(|| vec![T::zero(); g.n * chw]);
    let mut dk = need_dk.then(|| vec![T::zero(); g.o * rows]);
    let mut db = need_db.then(|| vec![T::zero(); g.o]);
    for ni in 0..g.n {
        let dy_n = &dy[ni * g.o * p..(ni + 1) * g.o * p];
        if let Some(dk) = dk.as_mut() {
            im2col(&x[ni * chw..(ni + 1) * chw], g, &mut cols);
            matmul(g.o, p, rows, dy_n, false, &cols, true, dk, true);
        }
        if let Some(dx) = dx.as_mut() {
            matmul(rows, g.o, p, k, true, dy_n, false, &mut cols, false);
            col2im(&cols, g, &mut dx[ni * chw..(ni + 1) * chw]);
        }
        if let Some(db) = db.as_mut() {
            for (oc, chunk) in dy_n.chunks(p).enumerate() {
                db[oc] += chunk.iter().copied().sum::<T>();
            }
        }
    }
    (dx, dk, db)
}

pub(crate) fn upsample2x_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); planes * oh * ow];
    for pl in 0..planes {
        let src = &x[pl * h * w..(pl + 1) * h * w];
        let dst = &mut out[pl * oh * ow..(pl + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                dst[i * ow + j] = src[(i / 2) * w + j / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2x_backward<T: Scalar>(dy: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![T::zero(); planes * h * w];
    for pl in 0..planes {
        let src = &dy[pl * oh * ow..(pl + 1) * oh * ow];
        let dst = &mut dx[pl * h * w..(pl + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                dst[(i / 2) * w + j / 2] += src[i * ow + j];
            }
        }
    }
    dx
}

/// 2×2 mean pooling, the left inverse of nearest-neighbour upsampling.
pub(crate) fn avg_pool2x<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut out = vec![T::zero(); planes * oh * ow];
    for pl in 0..planes {
        let src = &x[pl * h * w..(pl + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let s = src[2 * i * w + 2 * j]
                    + src[2 * i * w + 2 * j + 1]
                    + src[(2 * i + 1) * w + 2 * j]
                    + src[(2 * i + 1) * w + 2 * j + 1];
                out[pl * oh * ow + i * ow + j] = s * quarter;
            }
        }
    }
    out
}

/// Activation functions used by the networks.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::LeakyRelu(a) => {
                if x >= T::zero() {
                    x
                } else {
                    T::of(a) * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => {
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            }
        }
    }

    /// Derivative given input `x` and output `y`.
    pub(crate) fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu(a) => {
                if x >= T::zero() {
                    T::one()
                } else {
                    T::of(a)
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}
