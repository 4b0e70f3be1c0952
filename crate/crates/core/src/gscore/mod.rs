//! Geometry score: relaxed witness filtrations on random landmark sets,
//! one-dimensional persistence, relative living times and their mean.

use std::collections::HashMap;

use log::warn;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::FieldDataset;
use crate::rng;

/// A vertex, edge or triangle with its filtration value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Simplex {
    verts: [usize; 3],
    pub dim: usize,
    pub birth: f64,
}

impl Simplex {
    pub fn new(vertices: &[usize], birth: f64) -> Result<Self> {
        if vertices.is_empty() || vertices.len() > 3 {
            return Err(Error::Config(format!(
                "simplices have 1 to 3 vertices, got {}",
                vertices.len()
            )));
        }
        let mut verts = [0; 3];
        verts[..vertices.len()].copy_from_slice(vertices);
        verts[..vertices.len()].sort_unstable();
        Ok(Simplex {
            verts,
            dim: vertices.len() - 1,
            birth,
        })
    }

    pub fn vertices(&self) -> &[usize] {
        &self.verts[..=self.dim]
    }
}

/// Simplices sorted by (birth, dimension, vertices).
#[derive(Clone, Debug, PartialEq)]
pub struct Filtration {
    pub n_vertices: usize,
    pub simplices: Vec<Simplex>,
}

impl Filtration {
    pub fn new(n_vertices: usize, mut simplices: Vec<Simplex>) -> Self {
        simplices.sort_by(|a, b| {
            a.birth
                .total_cmp(&b.birth)
                .then(a.dim.cmp(&b.dim))
                .then_with(|| a.vertices().cmp(b.vertices()))
        });
        Filtration { n_vertices, simplices }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub birth: f64,
    pub death: f64,
}

fn pair_index(a: usize, b: usize, n: usize) -> usize {
    // a < b; rows of the strict upper triangle
    a * (2 * n - a - 1) / 2 + (b - a - 1)
}

/// Relaxed witness filtration up to dimension 2 from an L×W matrix of
/// landmark-to-witness distances. Simplex σ is born at
/// min_w [max_{l∈σ} d(w,l) − ν(w)], ν(w) being the distance from w to its
/// nearest landmark, raised to the births of its faces. Simplices born
/// after `alpha_max` are omitted.
pub fn witness_filtration(dist: &[f64], n_landmarks: usize, n_witnesses: usize, alpha_max: f64) -> Result<Filtration> {
    let (l, w) = (n_landmarks, n_witnesses);
    if l == 0 || w == 0 {
        return Err(Error::Config("witness filtration needs landmarks and witnesses".into()));
    }
    if dist.len() != l * w {
        return Err(Error::Shape(format!(
            "distance matrix has {} entries, expected {l}x{w}",
            dist.len()
        )));
    }
    if alpha_max.is_nan() || alpha_max < 0.0 {
        return Err(Error::Config(format!("alpha_max must be >= 0, got {alpha_max}")));
    }
    let n_edges = l * l.saturating_sub(1) / 2;
    let mut edge = vec![f64::INFINITY; n_edges];
    let mut tri: HashMap<[usize; 3], f64> = HashMap::new();
    let mut near: Vec<(f64, usize)> = Vec::with_capacity(l);
    for wi in 0..w {
        let nu = (0..l).map(|li| dist[li * w + wi]).fold(f64::INFINITY, f64::min);
        near.clear();
        near.extend(
            (0..l)
                .map(|li| (dist[li * w + wi] - nu, li))
                .filter(|&(v, _)| v <= alpha_max),
        );
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        // in distance order the last member of a tuple sets its value
        for k in 1..near.len() {
            let (v, c) = near[k];
            for i in 0..k {
                let a = near[i].1;
                let e = &mut edge[pair_index(a.min(c), a.max(c), l)];
                *e = e.min(v);
                for &(_, b) in &near[i + 1..k] {
                    let mut key = [a, b, c];
                    key.sort_unstable();
                    let t = tri.entry(key).or_insert(f64::INFINITY);
                    *t = t.min(v);
                }
            }
        }
    }
    let mut simplices: Vec<Simplex> = (0..l).map(|v| Simplex::new(&[v], 0.0)).collect::<Result<_>>()?;
    for a in 0..l {
        for b in a + 1..l {
            let e = edge[pair_index(a, b, l)];
            if e <= alpha_max {
                simplices.push(Simplex::new(&[a, b], e.max(0.0))?);
            }
        }
    }
    for (key, t) in tri {
        let [a, b, c] = key;
        let faces = [
            edge[pair_index(a, b, l)],
            edge[pair_index(a, c, l)],
            edge[pair_index(b, c, l)],
        ];
        let birth = faces.iter().copied().fold(t, f64::max);
        if birth <= alpha_max {
            simplices.push(Simplex::new(&key, birth)?);
        }
    }
    Ok(Filtration::new(l, simplices))
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Sorted-set symmetric difference (addition over Z2).
fn add_columns(acc: &mut Vec<usize>, other: &[usize], scratch: &mut Vec<usize>) {
    scratch.clear();
    let (mut i, mut j) = (0, 0);
    while i < acc.len() && j < other.len() {
        match acc[i].cmp(&other[j]) {
            std::cmp::Ordering::Less => {
                scratch.push(acc[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                scratch.push(other[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    scratch.extend_from_slice(&acc[i..]);
    scratch.extend_from_slice(&other[j..]);
    std::mem::swap(acc, scratch);
}

/// Dimension-1 persistence intervals by boundary-matrix reduction over Z2
/// in filtration order. Classes still alive end at `alpha_max`; intervals
/// of zero length are dropped.
pub fn persistence_beta1(f: &Filtration, alpha_max: f64) -> Result<Vec<Interval>> {
    let mut vertex_pos = vec![usize::MAX; f.n_vertices];
    let mut edge_pos: HashMap<(usize, usize), usize> = HashMap::new();
    let face_err = |s: &Simplex, why: &str| {
        Err(Error::Data(format!(
            "filtration violates the face property at {:?} (birth {}): {why}",
            s.vertices(),
            s.birth
        )))
    };
    for (pos, s) in f.simplices.iter().enumerate() {
        if s.vertices().iter().any(|&v| v >= f.n_vertices) {
            return face_err(s, "vertex index out of range");
        }
        if pos > 0 {
            let p = &f.simplices[pos - 1];
            if p.birth > s.birth || (p.birth == s.birth && p.dim > s.dim) {
                return face_err(s, "simplices are not in filtration order");
            }
        }
        match s.dim {
            0 => vertex_pos[s.verts[0]] = pos,
            1 => {
                let [a, b, _] = s.verts;
                if vertex_pos[a] == usize::MAX || vertex_pos[b] == usize::MAX {
                    return face_err(s, "endpoint appears later or not at all");
                }
                edge_pos.insert((a, b), pos);
            }
            _ => {
                let [a, b, c] = s.verts;
                for e in [(a, b), (a, c), (b, c)] {
                    match edge_pos.get(&e) {
                        Some(&q) if f.simplices[q].birth <= s.birth => {}
                        _ => return face_err(s, "edge appears later or not at all"),
                    }
                }
            }
        }
    }

    // edges joining two components are negative; the rest open a cycle
    let mut parent: Vec<usize> = (0..f.n_vertices).collect();
    let mut positive = vec![false; f.simplices.len()];
    for (pos, s) in f.simplices.iter().enumerate() {
        if s.dim == 1 {
            let (ra, rb) = (find(&mut parent, s.verts[0]), find(&mut parent, s.verts[1]));
            if ra == rb {
                positive[pos] = true;
            } else {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }

    let mut pivot_of: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut killed = vec![None; f.simplices.len()];
    let mut scratch = Vec::new();
    for s in &f.simplices {
        if s.dim != 2 {
            continue;
        }
        let [a, b, c] = s.verts;
        let mut col: Vec<usize> = [(a, b), (a, c), (b, c)].iter().map(|e| edge_pos[e]).collect();
        col.sort_unstable();
        while let Some(&low) = col.last() {
            match pivot_of.get(&low) {
                Some(other) => add_columns(&mut col, other, &mut scratch),
                None => break,
            }
        }
        if let Some(&low) = col.last() {
            killed[low] = Some(s.birth);
            pivot_of.insert(low, col);
        }
    }

    let mut out = Vec::new();
    for (pos, s) in f.simplices.iter().enumerate() {
        if !positive[pos] || s.birth > alpha_max {
            continue;
        }
        let death = killed[pos].unwrap_or(alpha_max).min(alpha_max);
        if death > s.birth {
            out.push(Interval { birth: s.birth, death });
        }
    }
    Ok(out)
}

/// Fraction of [0, alpha_max] spent at each hole count; counts of
/// `i_max` or more land in the last bin.
pub fn rlt(intervals: &[Interval], alpha_max: f64, i_max: usize) -> Result<Vec<f64>> {
    if !(alpha_max > 0.0 && alpha_max.is_finite()) {
        return Err(Error::Config(format!("alpha_max must be positive, got {alpha_max}")));
    }
    if i_max == 0 {
        return Err(Error::Config("i_max must be positive".into()));
    }
    let mut events: Vec<(f64, i64)> = Vec::with_capacity(2 * intervals.len());
    for iv in intervals {
        let (b, d) = (iv.birth.clamp(0.0, alpha_max), iv.death.clamp(0.0, alpha_max));
        if d > b {
            events.push((b, 1));
            events.push((d, -1));
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out = vec![0.0; i_max];
    let (mut t, mut count) = (0.0, 0i64);
    for (x, delta) in events {
        out[(count as usize).min(i_max - 1)] += x - t;
        t = x;
        count += delta;
    }
    out[(count as usize).min(i_max - 1)] += alpha_max - t;
    for v in &mut out {
        *v /= alpha_max;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GsConfig {
    pub n_sets: usize,
    pub landmarks: usize,
    pub i_max: usize,
    /// Scale of alpha_max relative to the largest landmark distance;
    /// `None` uses (1/128)/(N/5000).
    pub gamma: Option<f64>,
    pub seed: u64,
}

impl Default for GsConfig {
    fn default() -> Self {
        GsConfig {
            n_sets: 1000,
            landmarks: 64,
            i_max: 100,
            gamma: None,
            seed: 0,
        }
    }
}

impl GsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sets == 0 || self.landmarks == 0 || self.i_max == 0 {
            return Err(Error::Config("n_sets, landmarks and i_max must be positive".into()));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("gamma must be positive, got {g}")));
            }
        }
        Ok(())
    }

    pub fn gamma_for(&self, n: usize) -> f64 {
        self.gamma.unwrap_or((1.0 / 128.0) / (n as f64 / 5000.0))
    }
}

/// Row-major point cloud.
#[derive(Clone, Copy, Debug)]
pub struct Points<'a> {
    pub data: &'a [f64],
    pub n: usize,
    pub dim: usize,
}

impl<'a> Points<'a> {
    pub fn new(data: &'a [f64], n: usize, dim: usize) -> Result<Self> {
        if n == 0 || dim == 0 || data.len() != n * dim {
            return Err(Error::Shape(format!(
                "point cloud of {} values is not {n}x{dim}",
                data.len()
            )));
        }
        Ok(Points { data, n, dim })
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        self.row(i)
            .iter()
            .zip(self.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// RLT of one landmark set with every point as a witness; `None` when all
/// landmarks coincide.
pub fn landmark_rlt(points: Points<'_>, landmarks: &[usize], gamma: f64, i_max: usize) -> Result<Option<Vec<f64>>> {
    let l = landmarks.len();
    let mut diam: f64 = 0.0;
    for i in 0..l {
        for j in i + 1..l {
            diam = diam.max(points.distance(landmarks[i], landmarks[j]));
        }
    }
    let alpha_max = gamma * diam;
    if !(alpha_max > 0.0) {
        return Ok(None);
    }
    let mut dist = vec![0.0; l * points.n];
    for (li, &lm) in landmarks.iter().enumerate() {
        for w in 0..points.n {
            dist[li * points.n + w] = if w == lm { 0.0 } else { points.distance(lm, w) };
        }
    }
    let f = witness_filtration(&dist, l, points.n, alpha_max)?;
    let iv = persistence_beta1(&f, alpha_max)?;
    rlt(&iv, alpha_max, i_max).map(Some)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mrlt {
    pub values: Vec<f64>,
    pub gamma: f64,
    pub used_sets: usize,
    pub skipped_sets: usize,
}

/// Mean RLT over `cfg.n_sets` random landmark sets. Sets whose landmarks
/// all coincide are skipped; if every set is skipped the result puts all
/// mass on zero holes.
pub fn mrlt_points(points: Points<'_>, cfg: &GsConfig) -> Result<Mrlt> {
    cfg.validate()?;
    if points.n < cfg.landmarks {
        return Err(Error::Data(format!(
            "{} samples cannot supply {} landmarks",
            points.n, cfg.landmarks
        )));
    }
    let gamma = cfg.gamma_for(points.n);
    let mut sum = vec![0.0; cfg.i_max];
    let (mut used, mut skipped) = (0, 0);
    for j in 0..cfg.n_sets {
        let mut r = rng::stream(cfg.seed, "gs-landmarks", j as u64);
        let mut lm = index::sample(&mut r, points.n, cfg.landmarks).into_vec();
        lm.sort_unstable();
        match landmark_rlt(points, &lm, gamma, cfg.i_max)? {
            Some(v) => {
                for (s, x) in sum.iter_mut().zip(&v) {
                    *s += x;
                }
                used += 1;
            }
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        warn!("{skipped} of {} landmark sets had coincident landmarks and were skipped", cfg.n_sets);
    }
    let values = if used == 0 {
        let mut d = vec![0.0; cfg.i_max];
        d[0] = 1.0;
        d
    } else {
        sum.iter().map(|s| s / used as f64).collect()
    };
    Ok(Mrlt {
        values,
        gamma,
        used_sets: used,
        skipped_sets: skipped,
    })
}

pub fn mrlt(ds: &FieldDataset, cfg: &GsConfig) -> Result<Mrlt> {
    ds.require_non_empty()?;
    let flat: Vec<f64> = (0..ds.len()).flat_map(|i| ds.flat_sample(i)).collect();
    let dim = flat.len() / ds.len();
    mrlt_points(Points::new(&flat, ds.len(), dim)?, cfg)
}

/// Σ_i (a_i − b_i)².
pub fn gs_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("MRLT lengths differ: {} vs {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GsReport {
    pub gs: f64,
    pub real: Mrlt,
    pub fake: Mrlt,
    pub config: GsConfig,
}

/// Geometry score between equally sized datasets, both evaluated with the
/// same landmark seed.
pub fn geometry_score(fake: &FieldDataset, real: &FieldDataset, cfg: &GsConfig) -> Result<GsReport> {
    if fake.len() != real.len() {
        return Err(Error::Data(format!(
            "geometry score needs equally sized datasets, got {} fake and {} real",
            fake.len(),
            real.len()
        )));
    }
    if fake.grid() != real.grid() {
        return Err(Error::Data(format!(
            "fake fields are {:?}, real fields are {:?}",
            fake.grid(),
            real.grid()
        )));
    }
    let r = mrlt(real, cfg)?;
    let f = mrlt(fake, cfg)?;
    Ok(GsReport {
        gs: gs_distance(&f.values, &r.values)?,
        real: r,
        fake: f,
        config: cfg.clone(),
    })
}
