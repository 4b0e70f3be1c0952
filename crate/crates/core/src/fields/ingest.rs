//! Scattered DIC point clouds onto an equidistant pixel grid.
//!
//! Rectilinear inputs are resampled bilinearly. Anything else uses inverse
//! distance weighting (power 2) over the 4 nearest points, with exact
//! pass-through where a grid node coincides with a sample.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use super::DisplacementField;
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 4] = ["x_mm", "y_mm", "ux_mm", "uy_mm"];
const IDW_NEIGHBOURS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
    pub ux: f64,
    pub uy: f64,
}

impl ScatterPoint {
    fn key(&self) -> [f64; 4] {
        [self.x, self.y, self.ux, self.uy]
    }
}

/// Target grid: `height`×`width` nodes spanning a square of `extent_mm`,
/// endpoints included, anchored at `origin_mm` (defaults to the data minimum).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub extent_mm: f64,
    #[serde(default)]
    pub origin_mm: Option<(f64, f64)>,
}

impl GridSpec {
    pub fn square(size: usize, extent_mm: f64) -> Self {
        GridSpec {
            height: size,
            width: size,
            extent_mm,
            origin_mm: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 {
            return Err(Error::Config(format!(
                "grid must be at least 2x2, got {}x{}",
                self.height, self.width
            )));
        }
        if !(self.extent_mm > 0.0 && self.extent_mm.is_finite()) {
            return Err(Error::Config(format!("extent must be positive, got {}", self.extent_mm)));
        }
        Ok(())
    }
}

pub fn read_scatter_csv(path: &Path) -> Result<Vec<ScatterPoint>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scatter_csv(&text, path)
}

fn parse_scatter_csv(text: &str, path: &Path) -> Result<Vec<ScatterPoint>> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.split('\n').enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((i, l)) => break (i + 1, l),
            None => return Err(parse_err(1, "missing header".into())),
        }
    };
    let cols: Vec<&str> = header
        .1
        .trim_start_matches('\u{feff}')
        .trim_end_matches('\r')
        .split(',')
        .map(str::trim)
        .collect();
    if cols != CSV_HEADER {
        return Err(parse_err(
            header.0,
            format!("expected header `{}`, found `{}`", CSV_HEADER.join(","), header.1.trim_end()),
        ));
    }
    let mut points = Vec::new();
    for (i, raw) in lines {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(parse_err(i + 1, format!("expected 4 columns, found {}", fields.len())));
        }
        let mut v = [0f64; 4];
        for (k, s) in fields.iter().enumerate() {
            v[k] = s.parse::<f64>().map_err(|_| {
                parse_err(i + 1, format!("column {} (`{}`): not a number: `{s}`", k + 1, CSV_HEADER[k]))
            })?;
            if !v[k].is_finite() {
                return Err(parse_err(i + 1, format!("column {}: non-finite value", k + 1)));
            }
        }
        points.push(ScatterPoint {
            x: v[0],
            y: v[1],
            ux: v[2],
            uy: v[3],
        });
    }
    Ok(points)
}

/// Read a `x_mm,y_mm,ux_mm,uy_mm` CSV and resample it onto `grid`.
pub fn ingest_scatter_csv(path: &Path, grid: &GridSpec) -> Result<DisplacementField> {
    grid_scatter(&read_scatter_csv(path)?, grid)
}

pub fn grid_scatter(points: &[ScatterPoint], grid: &GridSpec) -> Result<DisplacementField> {
    grid.validate()?;
    if points.len() < 4 {
        return Err(Error::Data(format!("need at least 4 points, got {}", points.len())));
    }
    let (x0, y0) = grid.origin_mm.unwrap_or_else(|| {
        (
            points.iter().map(|p| p.x).fold(f64::INFINITY, f64::min),
            points.iter().map(|p| p.y).fold(f64::INFINITY, f64::min),
        )
    });
    let ext = grid.extent_mm;
    let inside = points
        .iter()
        .filter(|p| p.x >= x0 && p.x <= x0 + ext && p.y >= y0 && p.y <= y0 + ext)
        .count();
    if inside == 0 {
        return Err(Error::Data(format!(
            "no points inside region [{x0}, {}] x [{y0}, {}] mm",
            x0 + ext,
            y0 + ext
        )));
    }
    let sx = ext / (grid.width - 1) as f64;
    let sy = ext / (grid.height - 1) as f64;
    let n = grid.height * grid.width;
    let mut ux = vec![0.0; n];
    let mut uy = vec![0.0; n];
    let interp: Box<dyn Fn(f64, f64) -> (f64, f64)> = match Rectilinear::detect(points) {
        Some(r) => Box::new(move |x, y| r.eval(x, y)),
        None => {
            let idx = BucketIndex::new(points);
            Box::new(move |x, y| idx.idw(x, y))
        }
    };
    for i in 0..grid.height {
        let y = y0 + i as f64 * sy;
        for j in 0..grid.width {
            let (a, b) = interp(x0 + j as f64 * sx, y);
            ux[i * grid.width + j] = a;
            uy[i * grid.width + j] = b;
        }
    }
    DisplacementField::new(grid.height, grid.width, ux, uy, sx)
}

/// Samples on a complete tensor-product lattice.
struct Rectilinear {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ux: Vec<f64>,
    uy: Vec<f64>,
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

impl Rectilinear {
    fn detect(points: &[ScatterPoint]) -> Option<Self> {
        let xs = sorted_unique(points.iter().map(|p| p.x).collect());
        let ys = sorted_unique(points.iter().map(|p| p.y).collect());
        if xs.len() < 2 || ys.len() < 2 || xs.len() * ys.len() != points.len() {
            return None;
        }
        let xi: HashMap<u64, usize> = xs.iter().enumerate().map(|(i, v)| (v.to_bits(), i)).collect();
        let yi: HashMap<u64, usize> = ys.iter().enumerate().map(|(i, v)| (v.to_bits(), i)).collect();
        let mut seen = vec![false; points.len()];
        let mut ux = vec![0.0; points.len()];
        let mut uy = vec![0.0; points.len()];
        for p in points {
            let k = yi[&p.y.to_bits()] * xs.len() + xi[&p.x.to_bits()];
            if seen[k] {
                return None;
            }
            seen[k] = true;
            ux[k] = p.ux;
            uy[k] = p.uy;
        }
        Some(Rectilinear { xs, ys, ux, uy })
    }

    fn locate(axis: &[f64], v: f64) -> (usize, f64) {
        let v = v.clamp(axis[0], axis[axis.len() - 1]);
        let hi = axis.partition_point(|&a| a <= v).clamp(1, axis.len() - 1);
        let lo = hi - 1;
        (lo, (v - axis[lo]) / (axis[hi] - axis[lo]))
    }

    fn eval(&self, x: f64, y: f64) -> (f64, f64) {
        let (i, ty) = Self::locate(&self.ys, y);
        let (j, tx) = Self::locate(&self.xs, x);
        let nx = self.xs.len();
        let at = |v: &[f64]| {
            let a = v[i * nx + j];
            let b = v[i * nx + j + 1];
            let c = v[(i + 1) * nx + j];
            let d = v[(i + 1) * nx + j + 1];
            (1.0 - ty) * ((1.0 - tx) * a + tx * b) + ty * ((1.0 - tx) * c + tx * d)
        };
        (at(&self.ux), at(&self.uy))
    }
}

/// Uniform bucket grid for k-nearest-neighbour queries.
struct BucketIndex<'a> {
    points: &'a [ScatterPoint],
    x0: f64,
    y0: f64,
    cw: f64,
    ch: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl<'a> BucketIndex<'a> {
    fn new(points: &'a [ScatterPoint]) -> Self {
        let fold = |f: fn(&ScatterPoint) -> f64| {
            points
                .iter()
                .map(f)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let (x0, x1) = fold(|p| p.x);
        let (y0, y1) = fold(|p| p.y);
        let side = ((points.len() as f64 / 2.0).sqrt().ceil() as usize).max(1);
        let (nx, ny) = (side, side);
        let cw = ((x1 - x0) / nx as f64).max(f64::MIN_POSITIVE);
        let ch = ((y1 - y0) / ny as f64).max(f64::MIN_POSITIVE);
        let mut idx = BucketIndex {
            points,
            x0,
            y0,
            cw,
            ch,
            nx,
            ny,
            buckets: vec![Vec::new(); nx * ny],
        };
        for (k, p) in points.iter().enumerate() {
            let (i, j) = idx.cell(p.x, p.y);
            idx.buckets[i * nx + j].push(k);
        }
        idx
    }

    fn cell(&self, x: f64, y: f64) -> (usize, usize) {
        let j = ((x - self.x0) / self.cw).floor().clamp(0.0, (self.nx - 1) as f64) as usize;
        let i = ((y - self.y0) / self.ch).floor().clamp(0.0, (self.ny - 1) as f64) as usize;
        (i, j)
    }

    fn order(&self, a: &(f64, usize), b: &(f64, usize)) -> Ordering {
        a.0.total_cmp(&b.0).then_with(|| {
            let (ka, kb) = (self.points[a.1].key(), self.points[b.1].key());
            ka.iter()
                .zip(&kb)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
    }

    /// k nearest as (squared distance, index), ties broken by point content
    /// so the result does not depend on input row order.
    fn nearest(&self, x: f64, y: f64, k: usize) -> Vec<(f64, usize)> {
        let (ci, cj) = self.cell(x, y);
        let mut cand: Vec<(f64, usize)> = Vec::new();
        let max_r = self.nx.max(self.ny);
        for r in 0..=max_r {
            let (ri, rj) = (r as isize, r as isize);
            for di in -ri..=ri {
                for dj in -rj..=rj {
                    if di.abs() != ri && dj.abs() != rj {
                        continue;
                    }
                    let (i, j) = (ci as isize + di, cj as isize + dj);
                    if i < 0 || j < 0 || i >= self.ny as isize || j >= self.nx as isize {
                        continue;
                    }
                    for &p in &self.buckets[i as usize * self.nx + j as usize] {
                        let pt = &self.points[p];
                        let d2 = (pt.x - x).powi(2) + (pt.y - y).powi(2);
                        cand.push((d2, p));
                    }
                }
            }
            if cand.len() >= k {
                cand.sort_by(|a, b| self.order(a, b));
                // unscanned cells lie at least `reach` from the query (or its
                // projection onto the bucket box, which is no farther)
                let reach = r as f64 * self.cw.min(self.ch);
                if cand[k - 1].0 <= reach * reach {
                    break;
                }
            }
        }
        cand.sort_by(|a, b| self.order(a, b));
        cand.truncate(k);
        cand
    }

    fn idw(&self, x: f64, y: f64) -> (f64, f64) {
        let near = self.nearest(x, y, IDW_NEIGHBOURS.min(self.points.len()));
        let exact: Vec<&(f64, usize)> = near.iter().filter(|c| c.0 == 0.0).collect();
        if !exact.is_empty() {
            let m = exact.len() as f64;
            let sx: f64 = exact.iter().map(|c| self.points[c.1].ux).sum();
            let sy: f64 = exact.iter().map(|c| self.points[c.1].uy).sum();
            return (sx / m, sy / m);
        }
        let (mut wsum, mut ax, mut ay) = (0.0, 0.0, 0.0);
        for &(d2, p) in &near {
            let w = 1.0 / d2;
            wsum += w;
            ax += w * self.points[p].ux;
            ay += w * self.points[p].uy;
        }
        (ax / wsum, ay / wsum)
    }
}
