//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use dicgan::fields::{load_dataset, synth_corpus, DataSource, DatasetMeta, DisplacementField, FieldDataset, ScaleMode, SynthCorpusSpec};
use dicgan::gan::{d_loss_node, g_loss_node, Discriminator, GanSpec, Generator};
use dicgan::gscore::{
    geometry_score, mrlt_points, persistence_beta1, witness_filtration, Filtration, GsConfig, Interval, Points, Simplex,
};
use dicgan::rng::stream;
use dicgan::strain::{strain_feature, strain_fields, von_mises, VmConfig};
use dicgan::swd::{laplacian_pyramid, random_directions, sliced_wasserstein_with, swd_protocol, SwdConfig};
use dicgan::tensorcore::gradcheck::check_gradients;
use dicgan::tensorcore::{Activation, BatchNormStats, BnMode, Graph, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;
use tempfile::TempDir;

const LAYER_TOL: f64 = 1e-6;
const END_TO_END_TOL: f64 = 1e-4;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(60);
const STRAIN_TOL: f64 = 1e-12;
const VM_TOL: f64 = 1e-9;
const PYRAMID_TOL: f32 = 1e-6;
const GS_BUDGET: Duration = Duration::from_secs(600);
const GAN_BUDGET: Duration = Duration::from_secs(1800);

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = stream(seed, "acceptance", 0);
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

fn meta() -> DatasetMeta {
    DatasetMeta {
        specimen: String::new(),
        sigma_max_mpa: None,
        load_ratio: None,
        extent_mm: 1.0,
        source: DataSource::Synthetic,
        seed: None,
    }
}

fn corpus(n: usize, size: usize, seed: u64) -> FieldDataset {
    synth_corpus(&SynthCorpusSpec::new(n, size, seed)).unwrap().scale(ScaleMode::PerSample).unwrap()
}

// 1. autodiff

fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> dicgan::Result<Var> {
    let wt = g.constant(rand_tensor(g.value(y).shape(), seed));
    let p = g.mul(y, wt)?;
    Ok(g.sum(p))
}

fn autodiff() -> Outcome {
    let start = Instant::now();
    let mut layer_worst = 0f64;
    let mut note = |name: &str, err: f64, tol: f64| -> Result<(), String> {
        layer_worst = layer_worst.max(err);
        check(err < tol, format!("{name}: relative error {err:e}"))
    };
    for (k, stride, pad) in [(3, 1, 1), (4, 2, 1)] {
        let inputs = [rand_tensor(&[2, 2, 6, 6], 1), rand_tensor(&[3, 2, k, k], 2), rand_tensor(&[3], 3)];
        let r = check_gradients(&inputs, 1e-5, |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
            weighted_sum(g, y, 4)
        })
        .map_err(|e| e.to_string())?;
        note(&format!("conv{k}/{stride}"), r.max_relative_error(), LAYER_TOL)?;
    }
    for mode in [BnMode::Train, BnMode::Eval] {
        let inputs = [rand_tensor(&[3, 3, 4, 4], 5), rand_tensor(&[3], 6), rand_tensor(&[3], 7)];
        let r = check_gradients(&inputs, 1e-5, |g, v| {
            let mut stats = BatchNormStats::new(3);
            stats.running_mean = vec![0.1, -0.2, 0.05];
            stats.running_var = vec![0.8, 1.3, 0.5];
            let y = g.batch_norm(v[0], v[1], v[2], mode, &mut stats)?;
            weighted_sum(g, y, 8)
        })
        .map_err(|e| e.to_string())?;
        note(&format!("batch norm {mode:?}"), r.max_relative_error(), LAYER_TOL)?;
    }
    for kind in [Activation::Relu, Activation::LeakyRelu(0.2), Activation::Tanh, Activation::Sigmoid] {
        let r = check_gradients(&[rand_tensor(&[2, 3, 4, 4], 9)], 1e-5, |g, v| {
            let y = g.activation(v[0], kind);
            weighted_sum(g, y, 10)
        })
        .map_err(|e| e.to_string())?;
        note(&format!("{kind:?}"), r.max_relative_error(), LAYER_TOL)?;
    }
    let r = check_gradients(&[rand_tensor(&[3, 4], 11), rand_tensor(&[4, 2], 12), rand_tensor(&[2], 13)], 1e-5, |g, v| {
        let y = g.linear(v[0], v[1], v[2])?;
        weighted_sum(g, y, 14)
    })
    .map_err(|e| e.to_string())?;
    note("linear", r.max_relative_error(), LAYER_TOL)?;
    let r = check_gradients(&[rand_tensor(&[2, 3, 3, 3], 15)], 1e-5, |g, v| {
        let y = g.upsample_nearest2x(v[0])?;
        weighted_sum(g, y, 16)
    })
    .map_err(|e| e.to_string())?;
    note("upsample", r.max_relative_error(), LAYER_TOL)?;
    let r = check_gradients(&[rand_tensor(&[2, 1, 3, 3], 17), rand_tensor(&[2, 2, 3, 3], 18)], 1e-5, |g, v| {
        let y = g.concat_channels(&[v[0], v[1]])?;
        let y = g.reshape(y, &[2, 27])?;
        weighted_sum(g, y, 19)
    })
    .map_err(|e| e.to_string())?;
    note("concat/reshape", r.max_relative_error(), LAYER_TOL)?;
    let probs = Tensor::from_fn(&[4, 1], |i| 0.15 + 0.2 * i as f64);
    for complement in [false, true] {
        let r = check_gradients(&[probs.clone()], 1e-6, |g, v| Ok(g.neg_log_mean(v[0], complement, 1e-7)))
            .map_err(|e| e.to_string())?;
        note("log loss", r.max_relative_error(), LAYER_TOL)?;
    }
    for symmetric in [true, false] {
        let cfg = VmConfig { symmetric, strain_norm: 0.3, ..VmConfig::default() };
        let r = check_gradients(&[rand_tensor(&[2, 2, 5, 5], 20)], 1e-6, |g, v| {
            let y = strain_feature(g, v[0], &cfg)?;
            weighted_sum(g, y, 21)
        })
        .map_err(|e| e.to_string())?;
        note("strain channel", r.max_relative_error(), LAYER_TOL)?;
    }

    // composed physics-guided discriminator, input and parameters together;
    // the conv weights feed batch norm at a small init scale, so the step is kept small
    let spec = GanSpec { base_channels: 8, disc_channels: 4, physics_guided: true, ..GanSpec::default() };
    let disc = Discriminator::<f64>::new(&spec, 5).map_err(|e| e.to_string())?;
    let real: Tensor<f64> = corpus(4, 16, 2).to_tensor().map_err(|e| e.to_string())?;
    let mut r = stream(3, "fake", 0);
    let fake = Tensor::from_fn(&[4, 2, 16, 16], |_| r.random_range(-0.9..0.9));
    let mut inputs = vec![fake];
    inputs.extend(disc.params.params.iter().cloned());
    let mut e2e_worst = 0f64;
    for literal in [false, true] {
        let rep = check_gradients(&inputs, 1e-6, |g, v| {
            let mut d = disc.clone();
            let rv = g.constant(real.clone());
            let pr = d.forward(g, &v[1..], rv, BnMode::Train)?;
            let pf = d.forward(g, &v[1..], v[0], BnMode::Train)?;
            d_loss_node(g, pr, pf, literal)
        })
        .map_err(|e| e.to_string())?;
        e2e_worst = e2e_worst.max(rep.max_relative_error());
    }
    // generator parameters through the physics-guided discriminator
    let gen = Generator::<f64>::new(&spec, 1).map_err(|e| e.to_string())?;
    let mut r = stream(4, "z", 0);
    let z = Tensor::from_fn(&[3, 5], |_| r.random_range(-1.0..1.0));
    // one tensor at a time, step proportional to its magnitude
    for (i, p) in gen.params.params.iter().enumerate() {
        let rms = (p.data().iter().map(|v| v * v).sum::<f64>() / p.numel() as f64).sqrt();
        let step = (5e-5 * rms).max(1e-6);
        let rep = check_gradients(std::slice::from_ref(p), step, |g, v| {
            let mut gn = gen.clone();
            let mut d = disc.clone();
            let mut vars = gn.bind(g, false);
            vars[i] = v[0];
            let zv = g.constant(z.clone());
            let out = gn.forward(g, &vars, zv, BnMode::Train)?;
            let dv = d.bind(g, false);
            let pf = d.forward(g, &dv, out, BnMode::Train)?;
            Ok(g_loss_node(g, pf))
        })
        .map_err(|e| e.to_string())?;
        e2e_worst = e2e_worst.max(rep.max_relative_error());
    }
    check(e2e_worst < END_TO_END_TOL, format!("end-to-end relative error {e2e_worst:e}"))?;
    let took = start.elapsed();
    check(took < GRADCHECK_BUDGET, format!("took {took:?}"))?;
    Ok(format!(
        "layers max rel err {layer_worst:.2e} (< {LAYER_TOL:e}), end-to-end {e2e_worst:.2e} (< {END_TO_END_TOL:e}), {:.1}s",
        took.as_secs_f64()
    ))
}

// 2. strain

fn grid_field(h: usize, w: usize, pitch: f64, f: impl Fn(f64, f64) -> (f64, f64)) -> DisplacementField {
    let (mut ux, mut uy) = (Vec::new(), Vec::new());
    for i in 0..h {
        for j in 0..w {
            let (a, b) = f(j as f64 * pitch, i as f64 * pitch);
            ux.push(a);
            uy.push(b);
        }
    }
    DisplacementField::new(h, w, ux, uy, pitch).unwrap()
}

/// Forward differences by explicit indexing, last row/column repeated.
fn stencil(f: &DisplacementField, h: f64, symmetric: bool) -> [Vec<f64>; 3] {
    let (nh, nw) = (f.height(), f.width());
    let dx = |c: &[f64], i: usize, j: usize| {
        let j0 = j.min(nw - 2);
        (c[i * nw + j0 + 1] - c[i * nw + j0]) / h
    };
    let dy = |c: &[f64], i: usize, j: usize| {
        let i0 = i.min(nh - 2);
        (c[(i0 + 1) * nw + j] - c[i0 * nw + j]) / h
    };
    let mut out = [vec![], vec![], vec![]];
    for i in 0..nh {
        for j in 0..nw {
            out[0].push(dx(f.ux(), i, j));
            out[1].push(dy(f.uy(), i, j));
            out[2].push(if symmetric { 0.5 * (dy(f.ux(), i, j) + dx(f.uy(), i, j)) } else { dy(f.ux(), i, j) });
        }
    }
    out
}

fn strain() -> Outcome {
    let cfg = VmConfig { h: 0.5, ..VmConfig::default() };
    let max_abs = |v: &[f64]| v.iter().fold(0f64, |m, x| m.max(x.abs()));
    // translation plus infinitesimal rotation
    let theta = 1e-3;
    let rigid = grid_field(12, 9, 0.5, |x, y| (0.4 - theta * y, -1.1 + theta * x));
    let s = strain_fields(&rigid, &cfg).map_err(|e| e.to_string())?;
    let worst = max_abs(&s.exx).max(max_abs(&s.eyy)).max(max_abs(&s.exy));
    check(worst < STRAIN_TOL, format!("rigid motion strain {worst:e}"))?;
    let (a, b, c) = (0.021, -0.008, 0.013);
    let ramp = grid_field(10, 14, 0.5, |x, y| (a * x + c * y, b * y + c * x));
    let s = strain_fields(&ramp, &cfg).map_err(|e| e.to_string())?;
    for (name, got, want) in [("exx", &s.exx, a), ("eyy", &s.eyy, b), ("exy", &s.exy, c)] {
        let worst = got.iter().fold(0f64, |m, v| m.max((v - want).abs()));
        check(worst < STRAIN_TOL, format!("ramp {name} off by {worst:e}"))?;
    }
    for trial in 0..20u64 {
        let mut r = stream(trial, "strain-field", 0);
        let (h, w) = (r.random_range(2..20), r.random_range(2..20));
        let vals: Vec<f64> = (0..2 * h * w).map(|_| r.random_range(-1.0..1.0)).collect();
        let f = DisplacementField::new(h, w, vals[..h * w].to_vec(), vals[h * w..].to_vec(), 1.0).unwrap();
        let step = r.random_range(0.1..2.0);
        for symmetric in [true, false] {
            let cfg = VmConfig { h: step, symmetric, ..VmConfig::default() };
            let s = strain_fields(&f, &cfg).map_err(|e| e.to_string())?;
            let o = stencil(&f, step, symmetric);
            for (got, want) in [&s.exx, &s.eyy, &s.exy].into_iter().zip(&o) {
                let worst = got.iter().zip(want).fold(0f64, |m, (x, y)| m.max((x - y).abs()));
                check(worst < STRAIN_TOL, format!("random field trial {trial}: {worst:e}"))?;
            }
        }
    }
    // uniaxial states; δ is made negligible so the closed form applies
    let sharp = VmConfig { delta: 1e-30, ..VmConfig::default() };
    let mut vm_worst = 0f64;
    for a in [-0.5, -0.013, 0.002, 0.037, 1.0, 3.5] {
        let f = grid_field(4, 5, 1.0, |x, _| (a * x, 0.0));
        let vm = von_mises(&strain_fields(&f, &sharp).map_err(|e| e.to_string())?, &sharp);
        let want = 2.0 * f64::abs(a) / 3f64.sqrt();
        let f = grid_field(4, 5, 1.0, |_, y| (0.0, a * y));
        let vm_y = von_mises(&strain_fields(&f, &sharp).map_err(|e| e.to_string())?, &sharp);
        for v in vm.iter().chain(&vm_y) {
            vm_worst = vm_worst.max((v - want).abs());
        }
    }
    check(vm_worst < VM_TOL, format!("von Mises off by {vm_worst:e}"))?;
    Ok(format!("rigid/ramp/random oracle within {STRAIN_TOL:e}, vm analytic err {vm_worst:.1e} (< {VM_TOL:e})"))
}

// 3. pyramid

fn pyramid() -> Outcome {
    let n = 100;
    let mut worst = 0f32;
    for chunk in 0..10u64 {
        let mut r = stream(chunk, "pyramid", 0);
        let fields: Vec<DisplacementField> = (0..n / 10)
            .map(|_| {
                let ux = (0..256 * 256).map(|_| r.random_range(-1.0..1.0)).collect();
                let uy = (0..256 * 256).map(|_| r.random_range(-1.0..1.0)).collect();
                DisplacementField::new(256, 256, ux, uy, 1.0).unwrap()
            })
            .collect();
        let ds = FieldDataset::new(fields, meta()).map_err(|e| e.to_string())?;
        let p = laplacian_pyramid(&ds, 5).map_err(|e| e.to_string())?;
        let rec = p.reconstruct();
        let orig = ds.fields().iter().flat_map(|f| f.ux().iter().chain(f.uy()).map(|&v| v as f32));
        worst = rec.iter().zip(orig).fold(worst, |m, (a, b)| m.max((a - b).abs()));
    }
    check(worst < PYRAMID_TOL, format!("reconstruction error {worst:e}"))?;
    Ok(format!("{n} random 256x256 fields, max reconstruction error {worst:.1e} (< {PYRAMID_TOL:e})"))
}

// 4. SWD

fn permutation_min(px: &[f64], py: &[f64]) -> f64 {
    fn go(i: usize, px: &[f64], py: &[f64], used: &mut [bool], acc: f64, best: &mut f64) {
        if i == px.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..py.len() {
            if !used[j] {
                used[j] = true;
                go(i + 1, px, py, used, acc + (px[i] - py[j]).powi(2), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, px, py, &mut vec![false; py.len()], 0.0, &mut best);
    best / px.len() as f64
}

fn add_noise(ds: &FieldDataset, sigma: f64, seed: u64) -> FieldDataset {
    let mut r = stream(seed, "noise", (sigma * 1000.0) as u64);
    let noise = Normal::new(0.0, sigma).unwrap();
    let fields = ds
        .fields()
        .iter()
        .map(|f| {
            let ux = f.ux().iter().map(|v| v + noise.sample(&mut r)).collect();
            let uy = f.uy().iter().map(|v| v + noise.sample(&mut r)).collect();
            DisplacementField::new(f.height(), f.width(), ux, uy, f.pixel_pitch()).unwrap()
        })
        .collect();
    FieldDataset::new(fields, ds.meta.clone()).unwrap()
}

fn swd() -> Outcome {
    let real = corpus(64, 32, 2);
    let cfg = SwdConfig { repetitions: 2, n_slices: 128, ..SwdConfig::default() };
    let same = swd_protocol(&real, &real, &cfg).map_err(|e| e.to_string())?;
    check(same.per_level.iter().all(|&v| v == 0.0) && same.mean == 0.0, format!("identical sets: {:?}", same.per_level))?;
    let mut pair_worst = 0f64;
    for trial in 0..1000u64 {
        let mut r = stream(trial, "swd-pairing", 0);
        let n = r.random_range(1..=6);
        let dim = r.random_range(1..=4);
        let x: Vec<f64> = (0..n * dim).map(|_| r.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..n * dim).map(|_| r.random_range(-3.0..3.0)).collect();
        let dir = random_directions(1, dim, trial);
        let proj = |d: &[f64]| d.chunks(dim).map(|p| p.iter().zip(&dir).map(|(a, b)| a * b).sum()).collect::<Vec<f64>>();
        let got = sliced_wasserstein_with(&x, &y, n, dim, &dir).map_err(|e| e.to_string())?;
        let err = (got * got - permutation_min(&proj(&x), &proj(&y))).abs();
        pair_worst = pair_worst.max(err);
        check(err < 1e-12, format!("trial {trial} (n={n}): sorted pairing off by {err:e}"))?;
    }
    let mut rows = Vec::new();
    for seed in 0..3 {
        let cfg = SwdConfig { seed, ..cfg.clone() };
        let d: Vec<f64> = [0.05, 0.1, 0.2]
            .iter()
            .map(|&s| swd_protocol(&real, &add_noise(&real, s, seed), &cfg).map(|r| r.per_level[0]))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        check(d[0] > 0.0 && d[0] < d[1] && d[1] < d[2], format!("seed {seed}: finest-level SWD {d:?}"))?;
        rows.push(format!("{:.1}<{:.1}<{:.1}", d[0], d[1], d[2]));
    }
    Ok(format!(
        "identical sets 0, sorted pairing = permutation minimum in 1000 trials (max err {pair_worst:.1e}), noise monotone [{}]",
        rows.join(", ")
    ))
}

// 5. geometry score

fn dist_matrix(lms: &[[f64; 2]], wits: &[[f64; 2]]) -> Vec<f64> {
    lms.iter()
        .flat_map(|l| wits.iter().map(move |w| ((l[0] - w[0]).powi(2) + (l[1] - w[1]).powi(2)).sqrt()))
        .collect()
}

/// Z2 rank of columns packed into bit masks.
fn rank(cols: &[u64]) -> usize {
    let mut basis = [0u64; 64];
    let mut r = 0;
    for &c in cols {
        let mut v = c;
        while v != 0 {
            let top = 63 - v.leading_zeros() as usize;
            if basis[top] == 0 {
                basis[top] = v;
                r += 1;
                break;
            }
            v ^= basis[top];
        }
    }
    r
}

fn betti1(f: &Filtration, alpha: f64) -> usize {
    let live: Vec<&Simplex> = f.simplices.iter().filter(|s| s.birth <= alpha).collect();
    let edges: Vec<&[usize]> = live.iter().filter(|s| s.dim == 1).map(|s| s.vertices()).collect();
    let d1: Vec<u64> = edges.iter().map(|e| (1u64 << e[0]) | (1u64 << e[1])).collect();
    let d2: Vec<u64> = live
        .iter()
        .filter(|s| s.dim == 2)
        .map(|s| {
            let v = s.vertices();
            [[v[0], v[1]], [v[0], v[2]], [v[1], v[2]]]
                .iter()
                .map(|f| 1u64 << edges.iter().position(|e| *e == f).unwrap())
                .fold(0, |a, b| a | b)
        })
        .collect();
    edges.len() - rank(&d1) - rank(&d2)
}

fn alive(iv: &[Interval], alpha: f64) -> usize {
    iv.iter().filter(|i| i.birth <= alpha && alpha < i.death).count()
}

fn noisy_circle(n: usize, seed: u64) -> Vec<f64> {
    let mut r = stream(seed, "circle", 0);
    (0..n)
        .flat_map(|_| {
            let t = r.random_range(0.0..std::f64::consts::TAU);
            let rad = 1.0 + 0.01 * (r.random::<f64>() - 0.5);
            [rad * t.cos(), rad * t.sin()]
        })
        .collect()
}

fn disk(n: usize, seed: u64) -> Vec<f64> {
    let mut r = stream(seed, "disk", 0);
    (0..n)
        .flat_map(|_| {
            let t = r.random_range(0.0..std::f64::consts::TAU);
            let rad = r.random::<f64>().sqrt();
            [rad * t.cos(), rad * t.sin()]
        })
        .collect()
}

fn point_dataset(pts: &[f64]) -> FieldDataset {
    let fields = pts.chunks(2).map(|p| DisplacementField::new(1, 1, vec![p[0]], vec![p[1]], 1.0).unwrap()).collect();
    FieldDataset::new(fields, meta()).unwrap()
}

fn geometry() -> Outcome {
    for trial in 0..200u64 {
        let mut r = stream(trial, "gs-acceptance", 0);
        let l = r.random_range(1..=10);
        let extra = r.random_range(0..20);
        let lms: Vec<[f64; 2]> = (0..l).map(|_| [r.random(), r.random()]).collect();
        let mut wits = lms.clone();
        wits.extend((0..extra).map(|_| [r.random::<f64>(), r.random::<f64>()]));
        let d = dist_matrix(&lms, &wits);
        let full = witness_filtration(&d, l, wits.len(), f64::INFINITY).map_err(|e| e.to_string())?;
        let top = full.simplices.iter().map(|s| s.birth).fold(0.0, f64::max).max(1e-3);
        let alpha_max = top * r.random_range(0.3..1.2);
        let f = witness_filtration(&d, l, wits.len(), alpha_max).map_err(|e| e.to_string())?;
        let iv = persistence_beta1(&f, alpha_max).map_err(|e| e.to_string())?;
        for k in 0..50 {
            let a = alpha_max * (k as f64 + 0.5) / 50.0;
            let (got, want) = (alive(&iv, a), betti1(&f, a));
            check(got == want, format!("trial {trial}, alpha {a}: intervals give {got}, oracle {want}"))?;
        }
    }
    let cfg = GsConfig { n_sets: 40, seed: 7, ..GsConfig::default() };
    let circ = point_dataset(&noisy_circle(500, 1));
    let self_gs = geometry_score(&circ, &circ, &cfg).map_err(|e| e.to_string())?.gs;
    check(self_gs == 0.0, format!("GS(X,X) = {self_gs}"))?;
    let pts = noisy_circle(500, 1);
    let m = mrlt_points(Points::new(&pts, 500, 2).map_err(|e| e.to_string())?, &cfg).map_err(|e| e.to_string())?;
    check(m.values[1] > 0.5, format!("circle MRLT(1) = {}", m.values[1]))?;
    let gap = geometry_score(&circ, &point_dataset(&disk(500, 1)), &cfg).map_err(|e| e.to_string())?.gs;
    let mut baseline = 0.0;
    for s in 0..5 {
        baseline += geometry_score(&point_dataset(&noisy_circle(500, 10 + s)), &circ, &cfg).map_err(|e| e.to_string())?.gs / 5.0;
    }
    check(gap > 10.0 * baseline, format!("circle vs disk {gap}, baseline {baseline}"))?;
    let real = corpus(500, 16, 1);
    let fake = corpus(500, 16, 2);
    let full = GsConfig { seed: 11, ..GsConfig::default() };
    let start = Instant::now();
    let rep = geometry_score(&fake, &real, &full).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    check(took < GS_BUDGET && rep.gs.is_finite(), format!("full protocol took {took:?}"))?;
    Ok(format!(
        "200-trial Betti oracle ok, GS(X,X)=0, circle MRLT(1)={:.3}, circle/disk {:.3e} vs baseline {:.3e}, full protocol ({} sets x {} landmarks, 500 samples) {:.0}s",
        m.values[1],
        gap,
        baseline,
        full.n_sets,
        full.landmarks,
        took.as_secs_f64()
    ))
}

// CLI helpers

fn dicgan(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dicgan"))
        .current_dir(dir)
        .arg("-q")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(out.stdout)
    } else {
        Err(format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn read_json(path: PathBuf) -> Result<Value, String> {
    let bytes = fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn losses_finite(path: PathBuf) -> Result<bool, String> {
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut rows = 0;
    for line in text.lines().skip(1) {
        rows += 1;
        for cell in line.split(',').skip(2) {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => {}
                _ => return Ok(false),
            }
        }
    }
    Ok(rows > 0)
}

// 6. toy GAN

const ARCHS: [(&str, &str); 2] = [("classical", "off"), ("physics_guided", "on")];

fn toy_gan() -> Outcome {
    let t = TempDir::new().map_err(|e| e.to_string())?;
    let dir = t.path();
    dicgan(dir, &["synth", "--out", "train.ftc", "--count", "500", "--size", "16", "--seed", "17"])?;
    let cfg = serde_json::json!({
        "seed": 1,
        "data": { "train": "train.ftc" },
        "train": { "epochs": 200, "batch_size": 8, "adam": { "lr": 0.002 } },
        "compare": { "epochs": [20, 200] }
    });
    fs::write(dir.join("compare.json"), cfg.to_string()).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let table = dicgan(dir, &["compare", "--config", "compare.json", "--out", "cmp"])?;
    let took = start.elapsed();
    check(took < GAN_BUDGET, format!("compare took {took:?}"))?;
    let report = read_json(dir.join("cmp/compare_report.json"))?;
    let entries = report["entries"].as_array().ok_or("no entries")?;
    let shape: Vec<(String, u64)> = entries
        .iter()
        .map(|e| (e["architecture"].as_str().unwrap_or("").to_string(), e["epochs"].as_u64().unwrap_or(0)))
        .collect();
    let want: Vec<(String, u64)> = ARCHS.iter().flat_map(|(a, _)| [20, 200].map(|e| (a.to_string(), e))).collect();
    check(shape == want, format!("report rows {shape:?}"))?;
    for e in entries {
        let m = &e["metrics"];
        check(m["gs"]["gs_x1e3"].is_f64() && m["swd"]["mean_x1e3"].is_f64(), "entry without GS or SWD")?;
        let (lo, hi) = (e["output_min"].as_f64().unwrap_or(f64::NAN), e["output_max"].as_f64().unwrap_or(f64::NAN));
        check(-1.0 <= lo && hi <= 1.0, format!("outputs span [{lo}, {hi}]"))?;
    }
    let mut collapse_notes = Vec::new();
    for (arch, flag) in ARCHS {
        check(losses_finite(dir.join("cmp").join(arch).join("losses.csv"))?, format!("{arch}: non-finite loss"))?;
        let last = entries
            .iter()
            .find(|e| e["architecture"] == arch && e["epochs"] == 200)
            .ok_or("missing final entry")?;
        let c = &last["metrics"]["collapse"];
        let mut healthy = c["collapsed"] == Value::Bool(false);
        let mut tried = vec![format!("seed 1: {:.3}/{:.3}", c["statistic"].as_f64().unwrap_or(f64::NAN), c["tau"].as_f64().unwrap_or(f64::NAN))];
        // further seeds only when needed
        for seed in ["2", "3"] {
            if healthy {
                break;
            }
            let out = format!("{arch}_{seed}");
            let args = ["train", "--config", "compare.json", "--out", &out, "--seed", seed, "--physics-guided", flag];
            dicgan(dir, &args)?;
            let tr = read_json(dir.join(&out).join("train.json"))?;
            check(tr["losses_finite"] == Value::Bool(true), format!("{arch} seed {seed}: non-finite loss"))?;
            let samples = format!("{out}/samples.ftc");
            dicgan(dir, &["sample", "--checkpoint", &format!("{out}/checkpoint.ftc"), "--count", "500", "--out", &samples])?;
            let ds = load_dataset(&dir.join(&samples)).map_err(|e| e.to_string())?;
            let bounded = ds.fields().iter().all(|f| f.ux().iter().chain(f.uy()).all(|v| (-1.0..=1.0).contains(v)));
            check(bounded, format!("{arch} seed {seed}: outputs outside [-1, 1]"))?;
            healthy = tr["collapse"]["collapsed"] == Value::Bool(false);
            tried.push(format!(
                "seed {seed}: {:.3}/{:.3}",
                tr["collapse"]["statistic"].as_f64().unwrap_or(f64::NAN),
                tr["collapse"]["tau"].as_f64().unwrap_or(f64::NAN)
            ));
        }
        check(healthy, format!("{arch}: collapsed for every seed ({})", tried.join(", ")))?;
        collapse_notes.push(format!("{arch} [{}]", tried.join(", ")));
    }
    println!("{}", String::from_utf8_lossy(&table).trim_end());
    Ok(format!(
        "compare in {:.0}s, losses finite, outputs in [-1,1], collapse statistic/tau: {}; physics-guided lower GS: {}, lower SWD: {}",
        took.as_secs_f64(),
        collapse_notes.join("; "),
        report["physics_guided_better_gs"],
        report["physics_guided_better_swd"]
    ))
}

// 7. determinism

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn pipeline(dir: &Path) -> Result<(), String> {
    let mut csv = String::from("x_mm,y_mm,ux_mm,uy_mm\n");
    for i in 0..12 {
        for j in 0..12 {
            let (x, y) = (j as f64 * 0.7, i as f64 * 0.7);
            csv.push_str(&format!("{x},{y},{},{}\n", 0.01 * (x * 0.3).sin(), 0.02 * y));
        }
    }
    fs::write(dir.join("scan.csv"), csv).map_err(|e| e.to_string())?;
    let cfg = serde_json::json!({
        "seed": 4,
        "data": { "train": "data.ftc" },
        "train": { "epochs": 2, "collapse_samples": 8 },
        "swd": { "repetitions": 2, "n_slices": 64 },
        "gs": { "n_sets": 8, "landmarks": 8 },
        "compare": { "epochs": [1, 2] }
    });
    fs::write(dir.join("run.json"), cfg.to_string()).map_err(|e| e.to_string())?;
    let steps: [&[&str]; 10] = [
        &["ingest", "scan.csv", "--out", "out/scan.ftc", "--size", "16", "--extent-mm", "7.7"],
        &["synth", "--out", "data.ftc", "--count", "24", "--seed", "8"],
        &["strain", "--real", "data.ftc", "--out", "out/strain.ftc", "--csv-dir", "out/strain"],
        &["train", "--config", "run.json", "--out", "out/run"],
        &["sample", "--checkpoint", "out/run/checkpoint.ftc", "--count", "24", "--seed", "3", "--out", "out/fake.ftc"],
        &["eval", "swd", "--checkpoint", "out/run/checkpoint.ftc", "--out", "out/run"],
        &["eval", "gs", "--checkpoint", "out/run/checkpoint.ftc", "--out", "out/run"],
        &["report", "--run", "out/run"],
        &["eval", "swd", "--config", "run.json", "--fake", "out/fake.ftc", "--out", "out/fixed"],
        &["compare", "--config", "run.json", "--out", "out/compare"],
    ];
    for args in steps {
        dicgan(dir, args)?;
    }
    Ok(())
}

fn determinism() -> Outcome {
    let (a, b) = (TempDir::new().map_err(|e| e.to_string())?, TempDir::new().map_err(|e| e.to_string())?);
    pipeline(a.path())?;
    pipeline(b.path())?;
    let (ta, tb) = (tree(&a.path().join("out")), tree(&b.path().join("out")));
    let names = |t: &[(String, Vec<u8>)]| t.iter().map(|f| f.0.clone()).collect::<Vec<_>>();
    check(names(&ta) == names(&tb), "reruns produced different file sets")?;
    for ((name, x), (_, y)) in ta.iter().zip(&tb) {
        check(x == y, format!("{name} differs between reruns"))?;
    }
    Ok(format!("{} artifacts from ingest/synth/strain/train/sample/eval/report/compare byte-identical", ta.len()))
}

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("1 autodiff", autodiff),
        ("2 strain", strain),
        ("3 pyramid", pyramid),
        ("4 swd", swd),
        ("5 geometry score", geometry),
        ("6 toy gan", toy_gan),
        ("7 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("criterion {name}: PASS {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {name}: FAIL {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
