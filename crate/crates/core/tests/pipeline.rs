use dicgan::fields::{load_dataset, save_dataset, synth_corpus, FieldDataset, ScaleMode, SynthCorpusSpec};
use dicgan::gan::{load_checkpoint, sample, save_checkpoint, train, GanSpec, TrainConfig};
use dicgan::gscore::{geometry_score, GsConfig};
use dicgan::strain::{calibrate_strain_norm, strain_fields, von_mises, VmConfig};
use dicgan::swd::{swd_protocol, SwdConfig};
use proptest::prelude::*;

fn corpus(count: usize, size: usize, seed: u64) -> FieldDataset {
    let spec: SynthCorpusSpec =
        serde_json::from_value(serde_json::json!({ "count": count, "size": size, "seed": seed })).unwrap();
    synth_corpus(&spec).unwrap()
}

fn tiny_run(physics_guided: bool) -> (GanSpec, TrainConfig) {
    let spec = GanSpec {
        base_channels: 8,
        disc_channels: 8,
        physics_guided,
        ..GanSpec::default()
    };
    let config = TrainConfig {
        epochs: 2,
        batch_size: 4,
        seed: 3,
        collapse_samples: 8,
        ..TrainConfig::default()
    };
    (spec, config)
}

#[test]
fn dataset_survives_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/set.ftc");
    let ds = corpus(6, 16, 4);
    save_dataset(&path, &ds).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back.len(), ds.len());
    for (a, b) in ds.fields().iter().zip(back.fields()) {
        assert_eq!(a.ux(), b.ux());
        assert_eq!(a.uy(), b.uy());
        assert_eq!(a.pixel_pitch(), b.pixel_pitch());
    }
}

#[test]
fn scaling_round_trips_through_the_record() {
    let ds = corpus(4, 16, 9);
    let scaled = ds.scale(ScaleMode::PerSample).unwrap();
    assert!(scaled.is_scaled());
    for (orig, s) in ds.fields().iter().zip(scaled.fields()) {
        assert!(s.ux().iter().chain(s.uy()).all(|v| (-1.0..=1.0).contains(v)));
        let back = s.unscale().unwrap();
        for (x, y) in orig.ux().iter().zip(back.ux()) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-3));
        }
    }
}

#[test]
fn synthetic_fields_have_nonzero_strain() {
    let ds = corpus(3, 16, 2).scale(ScaleMode::PerSample).unwrap();
    let cfg = VmConfig::default();
    for f in ds.fields() {
        let vm = von_mises(&strain_fields(f, &cfg).unwrap(), &cfg);
        assert_eq!(vm.len(), 16 * 16);
        assert!(vm.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(vm.iter().any(|v| *v > 1e-3));
    }
    assert!(calibrate_strain_norm(&ds, &cfg).unwrap() > 0.0);
}

#[test]
fn metrics_are_zero_on_identical_sets() {
    let ds = corpus(16, 16, 5).scale(ScaleMode::PerSample).unwrap();
    let swd = swd_protocol(&ds, &ds, &SwdConfig { repetitions: 2, n_slices: 32, ..SwdConfig::default() }).unwrap();
    assert_eq!(swd.mean, 0.0);
    let gs = geometry_score(&ds, &ds, &GsConfig { n_sets: 4, landmarks: 6, ..GsConfig::default() }).unwrap();
    assert_eq!(gs.gs, 0.0);
}

#[test]
fn swd_separates_clean_from_noisy_corpora() {
    let clean = corpus(16, 16, 5).scale(ScaleMode::PerSample).unwrap();
    let spec: SynthCorpusSpec =
        serde_json::from_value(serde_json::json!({ "count": 16, "size": 16, "seed": 5, "noise_sigma": 0.05 })).unwrap();
    let noisy = synth_corpus(&spec).unwrap().scale(ScaleMode::PerSample).unwrap();
    let cfg = SwdConfig { repetitions: 1, n_slices: 64, ..SwdConfig::default() };
    assert!(swd_protocol(&clean, &noisy, &cfg).unwrap().mean > 0.0);
}

#[test]
fn training_is_deterministic_and_checkpoints_restore() {
    let ds = corpus(12, 16, 1).scale(ScaleMode::PerSample).unwrap();
    for pg in [false, true] {
        let (spec, config) = tiny_run(pg);
        let mut a = train(&ds, &spec, &config, |_| Ok(())).unwrap();
        let b = train(&ds, &spec, &config, |_| Ok(())).unwrap();
        assert_eq!(a.steps(), 6);
        assert_eq!(a.history, b.history);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.ftc");
        save_checkpoint(&path, &a, Some("abc")).unwrap();
        let mut ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.manifest.config_hash.as_deref(), Some("abc"));
        assert_eq!(ck.manifest.epoch, 2);

        let s1 = sample(&mut a.generator, 5, 11).unwrap();
        let s2 = sample(&mut ck.generator, 5, 11).unwrap();
        for (x, y) in s1.fields().iter().zip(s2.fields()) {
            assert_eq!(x.ux(), y.ux());
            assert!(x.ux().iter().chain(x.uy()).all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn swd_is_symmetric_and_nonnegative(sa in 0u64..1000, sb in 0u64..1000) {
        let a = corpus(4, 16, sa).scale(ScaleMode::PerSample).unwrap();
        let b = corpus(4, 16, sb).scale(ScaleMode::PerSample).unwrap();
        let cfg = SwdConfig { repetitions: 1, n_slices: 16, ..SwdConfig::default() };
        let ab = swd_protocol(&a, &b, &cfg).unwrap().mean;
        let ba = swd_protocol(&b, &a, &cfg).unwrap().mean;
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
    }
}
