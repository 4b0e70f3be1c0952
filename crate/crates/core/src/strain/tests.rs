use super::*;
use crate::fields::{DataSource, DatasetMeta};
use crate::tensorcore::gradcheck::check_gradients;
use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::Rng;

fn field(h: usize, w: usize, f: impl Fn(f64, f64) -> (f64, f64)) -> DisplacementField {
    let mut ux = Vec::new();
    let mut uy = Vec::new();
    for i in 0..h {
        for j in 0..w {
            let (a, b) = f(j as f64, i as f64);
            ux.push(a);
            uy.push(b);
        }
    }
    DisplacementField::new(h, w, ux, uy, 0.5).unwrap()
}

#[test]
fn rigid_translation_has_no_strain() {
    let cfg = VmConfig::default();
    let s = strain_fields(&field(5, 6, |_, _| (0.3, -1.2)), &cfg).unwrap();
    assert!(s.exx.iter().chain(&s.eyy).chain(&s.exy).all(|&v| v == 0.0));
    for v in von_mises(&s, &cfg) {
        assert_abs_diff_eq!(v, cfg.floor(), epsilon = 1e-15);
    }
}

#[test]
fn linear_ramp_gives_uniform_strain() {
    let a = 0.037;
    let cfg = VmConfig::default();
    let s = strain_fields(&field(4, 7, |x, _| (a * x, 0.0)), &cfg).unwrap();
    for k in 0..28 {
        assert_abs_diff_eq!(s.exx[k], a, epsilon = 1e-15);
        assert_eq!(s.eyy[k], 0.0);
        assert_eq!(s.exy[k], 0.0);
    }
    let vm = von_mises(&s, &cfg);
    assert_abs_diff_eq!(vm[0], 2.0 / 3f64.sqrt() * (a * a + 1e-8).sqrt(), epsilon = 1e-15);
    assert_abs_diff_eq!(vm[0], 2.0 * a / 3f64.sqrt(), epsilon = 1e-6);
}

#[test]
fn grid_step_scales_strains() {
    let cfg = VmConfig { h: 0.25, ..VmConfig::default() };
    let s = strain_fields(&field(3, 3, |x, y| (x, 2.0 * y)), &cfg).unwrap();
    assert!(s.exx.iter().all(|&v| v == 4.0));
    assert!(s.eyy.iter().all(|&v| v == 8.0));
}

#[test]
fn one_pixel_extent_is_rejected() {
    let f = field(1, 5, |x, _| (x, x));
    assert!(matches!(strain_fields(&f, &VmConfig::default()), Err(Error::Shape(_))));
}

/// Central-free reference: explicit index arithmetic per derivative.
fn stencil_oracle(f: &DisplacementField, h: f64, symmetric: bool) -> [Vec<f64>; 3] {
    let (nh, nw) = (f.height(), f.width());
    let at = |c: &[f64], i: usize, j: usize| c[i * nw + j];
    let dx = |c: &[f64], i: usize, j: usize| {
        let j0 = if j + 1 < nw { j } else { nw - 2 };
        (at(c, i, j0 + 1) - at(c, i, j0)) / h
    };
    let dy = |c: &[f64], i: usize, j: usize| {
        let i0 = if i + 1 < nh { i } else { nh - 2 };
        (at(c, i0 + 1, j) - at(c, i0, j)) / h
    };
    let mut out = [vec![], vec![], vec![]];
    for i in 0..nh {
        for j in 0..nw {
            out[0].push(dx(f.ux(), i, j));
            out[1].push(dy(f.uy(), i, j));
            out[2].push(if symmetric {
                0.5 * (dy(f.ux(), i, j) + dx(f.uy(), i, j))
            } else {
                dy(f.ux(), i, j)
            });
        }
    }
    out
}

#[test]
fn matches_independent_stencil() {
    let f = field(9, 11, |x, y| ((0.3 * x).sin() * (0.2 * y).cos(), 0.1 * x * y - (0.4 * y).sin()));
    for symmetric in [true, false] {
        let cfg = VmConfig { h: 0.7, symmetric, ..VmConfig::default() };
        let s = strain_fields(&f, &cfg).unwrap();
        let o = stencil_oracle(&f, 0.7, symmetric);
        for (got, want) in [&s.exx, &s.eyy, &s.exy].iter().zip(&o) {
            for (a, b) in got.iter().zip(want) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn von_mises_matches_formula() {
    let mut r = crate::rng::stream(1, "vm", 0);
    let n = 50;
    let s = StrainFields {
        height: 5,
        width: 10,
        exx: (0..n).map(|_| r.random_range(-1.0..1.0)).collect(),
        eyy: (0..n).map(|_| r.random_range(-1.0..1.0)).collect(),
        exy: (0..n).map(|_| r.random_range(-1.0..1.0)).collect(),
        h: 1.0,
        symmetric: true,
    };
    let cfg = VmConfig::default();
    let vm = von_mises(&s, &cfg);
    for k in 0..n {
        let (a, b, c) = (s.exx[k], s.eyy[k], s.exy[k]);
        let want = 2.0 / 3f64.sqrt() * (a * a + b * b + c * c + a * b + 1e-8).sqrt();
        assert_abs_diff_eq!(vm[k], want, epsilon = 1e-12);
    }
}

proptest! {
    #[test]
    fn von_mises_symmetric_and_floored(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0) {
        let cfg = VmConfig::default();
        let mk = |x, y| StrainFields {
            height: 1, width: 1, exx: vec![x], eyy: vec![y], exy: vec![c], h: 1.0, symmetric: true,
        };
        let v1 = von_mises(&mk(a, b), &cfg)[0];
        let v2 = von_mises(&mk(b, a), &cfg)[0];
        prop_assert_eq!(v1, v2);
        prop_assert!(v1 >= cfg.floor());
    }
}

fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = crate::rng::stream(seed, "strain-x", 0);
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

#[test]
fn feature_constant_input() {
    let cfg = VmConfig { strain_norm: 0.02, ..VmConfig::default() };
    let x = Tensor::<f64>::full(&[2, 2, 4, 4], 0.7);
    let y = strain_feature_tensor(&x, &cfg).unwrap();
    assert_eq!(y.shape(), &[2, 1, 4, 4]);
    for &v in y.data() {
        assert_abs_diff_eq!(v, cfg.floor() / 0.02, epsilon = 1e-15);
    }
}

#[test]
fn feature_equals_offline_pipeline() {
    let cfg = VmConfig { strain_norm: 0.3, ..VmConfig::default() };
    let x = random_tensor(&[3, 2, 6, 5], 2);
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let y = strain_feature(&mut g, v, &cfg).unwrap();
    let hw = 30;
    for s in 0..3 {
        let d = &x.data()[s * 2 * hw..(s + 1) * 2 * hw];
        let f = DisplacementField::new(6, 5, d[..hw].to_vec(), d[hw..].to_vec(), 1.0).unwrap();
        let vm = von_mises(&strain_fields(&f, &cfg).unwrap(), &cfg);
        for k in 0..hw {
            assert_abs_diff_eq!(g.value(y).data()[s * hw + k], vm[k] / 0.3, epsilon = 1e-12);
        }
    }
}

#[test]
fn feature_gradient_matches_finite_differences() {
    for symmetric in [true, false] {
        let cfg = VmConfig { symmetric, strain_norm: 0.5, h: 0.8, ..VmConfig::default() };
        let x = random_tensor(&[2, 2, 5, 4], 3);
        let report = check_gradients(&[x], 1e-5, |g, v| {
            let y = strain_feature(g, v[0], &cfg)?;
            Ok(g.sum(y))
        })
        .unwrap();
        assert!(report.max_relative_error() < 1e-5, "{symmetric}: {:?}", report);
    }
}

#[test]
fn feature_gradient_weighted_upstream() {
    // a non-uniform upstream gradient exercises every output position
    let cfg = VmConfig::default();
    let x = random_tensor(&[1, 2, 4, 6], 4);
    let wts = random_tensor(&[1, 1, 4, 6], 5);
    let report = check_gradients(&[x], 1e-5, |g, v| {
        let y = strain_feature(g, v[0], &cfg)?;
        let w = g.constant(wts.clone());
        let p = g.mul(y, w)?;
        Ok(g.sum(p))
    })
    .unwrap();
    assert!(report.max_relative_error() < 1e-6, "{report:?}");
}

#[test]
fn gradient_finite_at_zero_strain() {
    let cfg = VmConfig::default();
    let mut g = Graph::new();
    let x = g.param(Tensor::<f64>::full(&[1, 2, 3, 3], 0.25));
    let y = strain_feature(&mut g, x, &cfg).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    let grad = g.grad(x).unwrap();
    assert!(grad.data().iter().all(|v| v.is_finite()));
    assert!(grad.data().iter().all(|&v| v == 0.0));
}

#[test]
fn f32_feature_tracks_f64() {
    let cfg = VmConfig::default();
    let x = random_tensor(&[2, 2, 8, 8], 6);
    let a = strain_feature_tensor(&x, &cfg).unwrap();
    let b = strain_feature_tensor(&x.cast::<f32>(), &cfg).unwrap();
    for (p, q) in a.data().iter().zip(b.data()) {
        assert!((p - *q as f64).abs() < 1e-5 * (1.0 + p.abs()));
    }
}

#[test]
fn quantile_interpolates() {
    let mut v: Vec<f64> = (0..=200).map(|i| i as f64).collect();
    v.reverse();
    assert_eq!(quantile(&mut v, 0.995).unwrap(), 199.0);
    assert_eq!(quantile(&mut [3.0], 0.5).unwrap(), 3.0);
    assert_abs_diff_eq!(quantile(&mut [0.0, 1.0], 0.995).unwrap(), 0.995, epsilon = 1e-15);
    assert!(quantile(&mut [], 0.5).is_err());
}

#[test]
fn strain_norm_calibration() {
    let meta = DatasetMeta {
        specimen: String::new(),
        sigma_max_mpa: None,
        load_ratio: None,
        extent_mm: 1.0,
        source: DataSource::Synthetic,
        seed: None,
    };
    let fields: Vec<_> = (1..=4).map(|k| field(3, 3, move |x, _| (0.01 * k as f64 * x, 0.0))).collect();
    let ds = FieldDataset::new(fields, meta).unwrap();
    let cfg = VmConfig::default();
    let got = calibrate_strain_norm(&ds, &cfg).unwrap();
    let vm = |a: f64| 2.0 / 3f64.sqrt() * (a * a + 1e-8).sqrt();
    // 36 values, 9 per level; the 0.995 quantile lies among the largest
    assert_abs_diff_eq!(got, vm(0.04), epsilon = 1e-15);
}
