use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use dicgan::fields::{
    self, ftc::FtcEntry, ingest_scatter_csv, load_dataset, save_dataset, synth_corpus, DataSource, DatasetMeta,
    FieldDataset, GridSpec, ScaleMode, SynthCorpusSpec,
};
use dicgan::gan::{self, load_checkpoint, save_checkpoint, Generator, TrainEvent, TrainState};
use dicgan::gscore::geometry_score;
use dicgan::rng::derive_seed;
use dicgan::strain::{calibrate_strain_norm, strain_fields, von_mises};
use dicgan::swd::{swd_protocol, swd_protocol_with};
use log::{info, warn};

use crate::artifacts::{self as art, *};
use crate::config::{adopt_run_config, base_config, read_run_config, sha256_hex, write_run_config, Overrides, RunConfig};
use crate::{CompareArgs, EvalArgs, Fail, IngestArgs, ReportArgs, RunFlags, SampleArgs, StrainArgs, SynthArgs};

fn load_data(path: &Path) -> Result<FieldDataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn load_scaled(path: &Path, mode: ScaleMode) -> Result<FieldDataset> {
    let ds = load_data(path)?;
    if ds.is_scaled() {
        Ok(ds)
    } else {
        Ok(ds.scale(mode)?)
    }
}

fn elapsed(t0: Instant, record: bool) -> Option<f64> {
    record.then(|| t0.elapsed().as_secs_f64())
}

pub fn ingest(a: &IngestArgs) -> Result<()> {
    let grid = match &a.grid {
        Some(p) => art::read_json::<GridSpec>(p).map_err(|e| Fail::config(format!("{e:#}")))?,
        None => GridSpec::square(a.size, a.extent_mm),
    };
    let fields = a
        .csv
        .iter()
        .map(|p| ingest_scatter_csv(p, &grid).with_context(|| format!("ingesting {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let meta = DatasetMeta {
        specimen: a.specimen.clone(),
        sigma_max_mpa: a.sigma_max_mpa,
        load_ratio: a.load_ratio,
        extent_mm: grid.extent_mm,
        source: DataSource::Experimental,
        seed: None,
    };
    let ds = FieldDataset::new(fields, meta)?;
    save_dataset(&a.out, &ds)?;
    info!("wrote {} field(s) of {}x{} to {}", ds.len(), grid.height, grid.width, a.out.display());
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => art::read_json::<SynthCorpusSpec>(p).map_err(|e| Fail::config(format!("{e:#}")))?,
        None => SynthCorpusSpec::new(a.count, a.size, 0),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    spec.validate().map_err(|e| Fail::config(e.to_string()))?;
    let ds = synth_corpus(&spec)?;
    save_dataset(&a.out, &ds)?;
    info!("wrote {} synthetic {}x{} field(s) to {}", spec.count, spec.size, spec.size, a.out.display());
    Ok(())
}

pub fn strain(a: &StrainArgs) -> Result<()> {
    let mut vm = RunConfig::load_or_default(a.config.as_deref())?.gan.vm;
    if a.paper_literal_strain {
        vm.symmetric = false;
    }
    let ds = load_data(&a.real)?;
    let (h, w) = ds.require_non_empty()?;
    let n = ds.len();
    let mut comps: [Vec<f64>; 4] = Default::default();
    for (i, f) in ds.fields().iter().enumerate() {
        // differences are taken in the field's own length unit
        let cfg = dicgan::strain::VmConfig {
            h: f.pixel_pitch(),
            ..vm.clone()
        };
        let s = strain_fields(f, &cfg)?;
        let v = von_mises(&s, &cfg);
        if let Some(dir) = &a.csv_dir {
            let mut csv = String::from("row,col,exx,eyy,exy,evm\n");
            for k in 0..h * w {
                let _ = writeln!(csv, "{},{},{},{},{},{}", k / w, k % w, s.exx[k], s.eyy[k], s.exy[k], v[k]);
            }
            art::write(&dir.join(format!("strain_{i:05}.csv")), csv.as_bytes())?;
        }
        comps[0].extend(&s.exx);
        comps[1].extend(&s.eyy);
        comps[2].extend(&s.exy);
        comps[3].extend(&v);
    }
    let entries: Vec<FtcEntry> = ["exx", "eyy", "exy", "evm"]
        .iter()
        .zip(comps)
        .map(|(name, data)| FtcEntry::f64(*name, vec![n, h, w], data))
        .collect();
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    fields::ftc::save_ftc(&a.out, &entries)?;
    info!("wrote strain components of {n} field(s) to {}", a.out.display());
    Ok(())
}

/// Check the architecture against the data and fix the strain divisor.
fn prepare(cfg: RunConfig, real: &FieldDataset) -> Result<RunConfig> {
    let (h, w) = real.require_non_empty()?;
    cfg.gan
        .check_resolution(h, w)
        .map_err(|e| Fail::config(e.to_string()))?;
    calibrate(cfg, real)
}

/// Replace the strain divisor by its data-derived value once; the result
/// is recorded so later commands on the same run see the same config.
fn calibrate(mut cfg: RunConfig, real: &FieldDataset) -> Result<RunConfig> {
    if cfg.data.calibrate_strain_norm {
        cfg.gan.vm.strain_norm = calibrate_strain_norm(real, &cfg.gan.vm)?;
        cfg.data.calibrate_strain_norm = false;
        info!("strain channel divisor calibrated to {}", cfg.gan.vm.strain_norm);
    }
    Ok(cfg)
}

fn losses_finite(state: &TrainState) -> bool {
    state.history.iter().all(|r| r.l_d.is_finite() && r.l_g.is_finite())
}

fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:05}.ftc")
}

pub fn train(f: &RunFlags) -> Result<()> {
    let t0 = Instant::now();
    let cfg = RunConfig::load_or_default(f.config.as_deref())?.resolve(&f.overrides())?;
    let out = cfg.out_dir()?.to_path_buf();
    let real = load_scaled(cfg.train_path()?, cfg.data.scale)?;
    let cfg = prepare(cfg, &real)?;
    let hash = write_run_config(&out, &cfg)?;
    let state = gan::train(&real, &cfg.gan, &cfg.train, |ev| {
        match ev {
            TrainEvent::Checkpoint(s) if s.epoch < cfg.train.epochs => {
                let p = out.join("checkpoints").join(checkpoint_name(s.epoch));
                std::fs::create_dir_all(p.parent().expect("has parent")).map_err(|e| dicgan::Error::Io {
                    path: p.clone(),
                    source: e,
                })?;
                save_checkpoint(&p, s, Some(&hash))?;
            }
            TrainEvent::Checkpoint(_) => {}
            TrainEvent::Restart { attempt, seed, .. } => info!("restart {attempt} with seed {seed}"),
        }
        Ok(())
    })?;
    save_checkpoint(&out.join("checkpoint.ftc"), &state, Some(&hash))?;
    art::write(&out.join(LOSSES_CSV), losses_csv(&state.history).as_bytes())?;
    let last = state.history.last();
    let summary = TrainArtifact {
        config_hash: hash,
        epochs: state.epoch,
        steps: state.history.len(),
        run_seed: state.run_seed,
        restarts: state.restarts,
        collapse: state.collapse,
        final_l_d: last.map(|r| r.l_d),
        final_l_g: last.map(|r| r.l_g),
        losses_finite: losses_finite(&state),
        wall_clock_s: elapsed(t0, f.record_timing),
    };
    art::write_json(&out.join(TRAIN_FILE), &summary)?;
    if let Some(c) = state.collapse {
        info!(
            "collapse statistic {:.4} (threshold {:.4}){}",
            c.statistic,
            c.tau,
            if c.collapsed { ": collapsed" } else { "" }
        );
    }
    info!("run written to {}", out.display());
    Ok(())
}

pub fn sample(a: &SampleArgs) -> Result<()> {
    let mut ck = load_checkpoint(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let ds = gan::sample(&mut ck.generator, a.count, a.seed)?;
    if ds.is_empty() {
        return Err(Fail::usage("--count must be positive").into());
    }
    save_dataset(&a.out, &ds)?;
    info!("wrote {} sample(s) to {}", ds.len(), a.out.display());
    Ok(())
}

enum Fake {
    Data(FieldDataset, String),
    Model(Box<Generator<f32>>, String),
}

fn fake_source(a: &EvalArgs, mode: ScaleMode) -> Result<Fake> {
    match (&a.fake, &a.checkpoint) {
        (Some(p), None) => Ok(Fake::Data(load_scaled(p, mode)?, p.display().to_string())),
        (None, Some(p)) => {
            let ck = load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?;
            Ok(Fake::Model(Box::new(ck.generator), p.display().to_string()))
        }
        _ => Err(Fail::usage("give exactly one of --fake and --checkpoint").into()),
    }
}

fn eval_setup(a: &EvalArgs) -> Result<(RunConfig, FieldDataset, String)> {
    let o = Overrides {
        seed: a.seed,
        out: a.out.clone(),
        real: a.real.clone(),
        ..Overrides::default()
    };
    let cfg = base_config(a.config.as_deref(), a.out.as_deref())?.resolve(&o)?;
    let real = load_scaled(cfg.train_path()?, cfg.data.scale)?;
    let cfg = calibrate(cfg, &real)?;
    let hash = match &a.out {
        Some(dir) => adopt_run_config(dir, &cfg)?,
        None => sha256_hex(&cfg.to_json()),
    };
    Ok((cfg, real, hash))
}

fn emit(out: Option<&Path>, files: &[(&str, Vec<u8>)]) -> Result<()> {
    match out {
        Some(dir) => {
            for (name, bytes) in files {
                art::write(&dir.join(name), bytes)?;
            }
            info!("results written to {}", dir.display());
        }
        None => print!("{}", String::from_utf8_lossy(&files[0].1)),
    }
    Ok(())
}

fn json_bytes<T: serde::Serialize>(v: &T) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("artifact serializes");
    b.push(b'\n');
    b
}

pub fn eval_swd(a: &EvalArgs) -> Result<()> {
    let (cfg, real, hash) = eval_setup(a)?;
    let n = cfg.eval.samples.unwrap_or(real.len());
    let (report, fake_name) = match fake_source(a, cfg.data.scale)? {
        Fake::Data(fake, name) => (swd_protocol(&real, &fake, &cfg.swd)?, name),
        Fake::Model(mut g, name) => {
            let seed = cfg.swd.seed;
            let r = swd_protocol_with(&real, |rep| gan::sample(&mut g, n, derive_seed(seed, "swd-fake", rep as u64)), &cfg.swd)?;
            (r, name)
        }
    };
    if !report.per_level.iter().all(|v| v.is_finite()) {
        return Err(Fail::numerical("SWD produced a non-finite value").into());
    }
    let artifact = SwdArtifact {
        config_hash: hash,
        real: cfg.train_path()?.display().to_string(),
        fake: fake_name,
        report,
    };
    emit(
        a.out.as_deref(),
        &[
            (SWD_FILE, json_bytes(&artifact)),
            (SWD_LEVELS_CSV, swd_levels_csv(&artifact.report).into_bytes()),
            (SWD_REPS_CSV, swd_repetitions_csv(&artifact.report).into_bytes()),
        ],
    )
}

pub fn eval_gs(a: &EvalArgs) -> Result<()> {
    let (cfg, real, hash) = eval_setup(a)?;
    let (fake, fake_name) = match fake_source(a, cfg.data.scale)? {
        Fake::Data(fake, name) => (fake, name),
        Fake::Model(mut g, name) => (gan::sample(&mut g, real.len(), derive_seed(cfg.gs.seed, "gs-fake", 0))?, name),
    };
    let report = geometry_score(&fake, &real, &cfg.gs)?;
    if !report.gs.is_finite() {
        return Err(Fail::numerical("geometry score is not finite").into());
    }
    let artifact = GsArtifact {
        config_hash: hash,
        real: cfg.train_path()?.display().to_string(),
        fake: fake_name,
        gs_x1e3: 1e3 * report.gs,
        report,
    };
    let mrlt = mrlt_csv(&artifact.report.real.values, &artifact.report.fake.values);
    emit(
        a.out.as_deref(),
        &[(GS_FILE, json_bytes(&artifact)), (MRLT_CSV, mrlt.into_bytes())],
    )
}

fn optional<T: for<'de> serde::Deserialize<'de>>(path: PathBuf) -> Result<Option<T>> {
    if path.exists() {
        art::read_json(&path).map(Some)
    } else {
        Ok(None)
    }
}

fn check_hash(found: &str, expected: &str, what: &str) -> Result<()> {
    if found != expected {
        return Err(Fail::config(format!(
            "{what} was produced under config {found}, the run directory holds {expected}"
        ))
        .into());
    }
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let dir = &a.run;
    let (cfg, hash) = read_run_config(dir)?;
    let swd: Option<SwdArtifact> = optional(dir.join(SWD_FILE))?;
    let gs: Option<GsArtifact> = optional(dir.join(GS_FILE))?;
    let train: Option<TrainArtifact> = optional(dir.join(TRAIN_FILE))?;
    if swd.is_none() && gs.is_none() && train.is_none() {
        return Err(Fail::data(format!(
            "{} holds no {SWD_FILE}, {GS_FILE} or {TRAIN_FILE}",
            dir.display()
        ))
        .into());
    }
    if let Some(s) = &swd {
        check_hash(&s.config_hash, &hash, SWD_FILE)?;
        art::write(&dir.join(SWD_LEVELS_CSV), swd_levels_csv(&s.report).as_bytes())?;
    }
    if let Some(g) = &gs {
        check_hash(&g.config_hash, &hash, GS_FILE)?;
        art::write(&dir.join(MRLT_CSV), mrlt_csv(&g.report.real.values, &g.report.fake.values).as_bytes())?;
    }
    if let Some(t) = &train {
        check_hash(&t.config_hash, &hash, TRAIN_FILE)?;
        if !dir.join(LOSSES_CSV).exists() {
            return Err(Fail::data(format!("missing artifact {}", dir.join(LOSSES_CSV).display())).into());
        }
    }
    let report = MetricsReport {
        format: METRICS_FORMAT.into(),
        config_hash: hash,
        seeds: Seeds {
            master: cfg.seed,
            train: cfg.train.seed,
            swd: cfg.swd.seed,
            gs: cfg.gs.seed,
            run: train.as_ref().map(|t| t.run_seed),
        },
        swd: swd.as_ref().map(|s| SwdSummary::from(&s.report)),
        gs: gs.as_ref().map(|g| GsSummary::from(&g.report)),
        collapse: train.as_ref().and_then(|t| t.collapse),
        training: train.as_ref().map(|t| TrainingSummary {
            epochs: t.epochs,
            steps: t.steps,
            restarts: t.restarts,
            final_l_d: t.final_l_d,
            final_l_g: t.final_l_g,
            losses_finite: t.losses_finite,
        }),
        wall_clock_s: train.as_ref().and_then(|t| t.wall_clock_s),
    };
    report.check_finite()?;
    art::write_json(&dir.join(REPORT_FILE), &report)?;
    info!("wrote {}", dir.join(REPORT_FILE).display());
    Ok(())
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

struct Snapshot {
    epoch: usize,
    generator: Generator<f32>,
    collapse: Option<gan::CollapseReport>,
    steps: usize,
    final_l_d: Option<f64>,
    final_l_g: Option<f64>,
    finite: bool,
}

pub fn compare(f: &CompareArgs) -> Result<()> {
    let t0 = Instant::now();
    let cfg = RunConfig::load_or_default(f.run.config.as_deref())?.resolve(&f.run.overrides())?;
    let out = cfg.out_dir()?.to_path_buf();
    let real = load_scaled(cfg.train_path()?, cfg.data.scale)?;
    let cfg = prepare(cfg, &real)?;
    let hash = write_run_config(&out, &cfg)?;
    let mut epochs = cfg.compare.epochs.clone();
    if epochs.is_empty() {
        epochs.push(cfg.train.epochs);
    }
    epochs.sort_unstable();
    epochs.dedup();
    let mut tc = cfg.train.clone();
    tc.checkpoint_every = epochs.iter().fold(0, |g, &e| gcd(g, e));

    let mut entries = Vec::new();
    for (arch, pg) in [("classical", false), ("physics_guided", true)] {
        let spec = gan::GanSpec {
            physics_guided: pg,
            ..cfg.gan.clone()
        };
        let dir = out.join(arch);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        info!("training {arch} model for {} epochs", tc.epochs);
        let mut snaps: Vec<Snapshot> = Vec::new();
        let state = gan::train(&real, &spec, &tc, |ev| {
            match ev {
                TrainEvent::Checkpoint(s) if epochs.contains(&s.epoch) => {
                    save_checkpoint(&dir.join(checkpoint_name(s.epoch)), s, Some(&hash))?;
                    let last = s.history.last();
                    snaps.push(Snapshot {
                        epoch: s.epoch,
                        generator: s.generator.clone(),
                        collapse: s.collapse,
                        steps: s.history.len(),
                        final_l_d: last.map(|r| r.l_d),
                        final_l_g: last.map(|r| r.l_g),
                        finite: losses_finite(s),
                    });
                }
                TrainEvent::Checkpoint(_) => {}
                TrainEvent::Restart { attempt, seed, .. } => {
                    info!("{arch}: restart {attempt} with seed {seed}");
                    snaps.clear();
                }
            }
            Ok(())
        })?;
        art::write(&dir.join(LOSSES_CSV), losses_csv(&state.history).as_bytes())?;
        for mut s in snaps {
            info!("{arch}: evaluating epoch {}", s.epoch);
            let n = cfg.eval.samples.unwrap_or(real.len());
            let swd_seed = cfg.swd.seed;
            let swd = swd_protocol_with(
                &real,
                |rep| gan::sample(&mut s.generator, n, derive_seed(swd_seed, "swd-fake", rep as u64)),
                &cfg.swd,
            )?;
            let fake = gan::sample(&mut s.generator, real.len(), derive_seed(cfg.gs.seed, "gs-fake", 0))?;
            let gs = geometry_score(&fake, &real, &cfg.gs)?;
            let (lo, hi) = fake
                .fields()
                .iter()
                .flat_map(|f| f.ux().iter().chain(f.uy()))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let metrics = MetricsReport {
                format: METRICS_FORMAT.into(),
                config_hash: hash.clone(),
                seeds: Seeds {
                    master: cfg.seed,
                    train: tc.seed,
                    swd: cfg.swd.seed,
                    gs: cfg.gs.seed,
                    run: Some(state.run_seed),
                },
                swd: Some(SwdSummary::from(&swd)),
                gs: Some(GsSummary::from(&gs)),
                collapse: s.collapse,
                training: Some(TrainingSummary {
                    epochs: s.epoch,
                    steps: s.steps,
                    restarts: state.restarts,
                    final_l_d: s.final_l_d,
                    final_l_g: s.final_l_g,
                    losses_finite: s.finite,
                }),
                wall_clock_s: None,
            };
            metrics.check_finite()?;
            entries.push(CompareEntry {
                architecture: arch.into(),
                epochs: s.epoch,
                output_min: lo,
                output_max: hi,
                metrics,
            });
        }
    }

    let last = |arch: &str| entries.iter().rev().find(|e| e.architecture == arch);
    let better = |key: fn(&MetricsReport) -> Option<f64>| match (last("physics_guided"), last("classical")) {
        (Some(p), Some(c)) => Some(key(&p.metrics)? < key(&c.metrics)?),
        _ => None,
    };
    let report = CompareReport {
        format: COMPARE_FORMAT.into(),
        config_hash: hash,
        physics_guided_better_gs: better(|m| m.gs.as_ref().map(|g| g.gs_x1e3)),
        physics_guided_better_swd: better(|m| m.swd.as_ref().map(|w| w.mean_x1e3)),
        entries,
        wall_clock_s: elapsed(t0, f.run.record_timing),
    };
    art::write_json(&out.join("compare_report.json"), &report)?;
    art::write(&out.join("compare_table.csv"), compare_table_csv(&report).as_bytes())?;
    print!("{}", compare_table_text(&report));
    if report.entries.iter().any(|e| e.metrics.collapse.is_some_and(|c| c.collapsed)) {
        warn!("at least one model collapsed; see compare_report.json");
    }
    Ok(())
}
