//! Artifact types and writers. Everything goes through a temporary file and
//! a rename, and floats are printed in shortest round-trip form so reruns
//! are byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use dicgan::gan::{CollapseReport, StepRecord};
use dicgan::gscore::GsReport;
use dicgan::swd::SwdReport;
use serde::{Deserialize, Serialize};

use crate::Fail;

pub const METRICS_FORMAT: &str = "dicgan-metrics/1";
pub const COMPARE_FORMAT: &str = "dicgan-compare/1";

pub const SWD_FILE: &str = "swd.json";
pub const GS_FILE: &str = "gs.json";
pub const TRAIN_FILE: &str = "train.json";
pub const REPORT_FILE: &str = "metrics_report.json";
pub const LOSSES_CSV: &str = "losses.csv";
pub const SWD_LEVELS_CSV: &str = "swd_levels.csv";
pub const SWD_REPS_CSV: &str = "swd_repetitions.csv";
pub const MRLT_CSV: &str = "mrlt.csv";

pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    dicgan::fields::write_atomic(path, bytes)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut v = serde_json::to_vec_pretty(value).expect("artifact serializes");
    v.push(b'\n');
    write(path, &v)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Fail::data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| Fail::data(format!("{}: {e}", path.display())).into())
}

pub fn losses_csv(history: &[StepRecord]) -> String {
    let mut s = String::from("step,epoch,L_D,L_G,D_real_mean,D_fake_mean\n");
    for r in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.step, r.epoch, r.l_d, r.l_g, r.d_real_mean, r.d_fake_mean
        );
    }
    s
}

pub fn swd_levels_csv(r: &SwdReport) -> String {
    let mut s = String::from("level,resolution,patches,swd_x1e3\n");
    for (l, ((res, p), v)) in r.resolutions.iter().zip(&r.patch_counts).zip(&r.per_level).enumerate() {
        let _ = writeln!(s, "{l},{res},{p},{v}");
    }
    let _ = writeln!(s, "mean,,,{}", r.mean);
    s
}

pub fn swd_repetitions_csv(r: &SwdReport) -> String {
    let mut s = String::from("repetition");
    for res in &r.resolutions {
        let _ = write!(s, ",swd_{res}_x1e3");
    }
    s.push('\n');
    for (i, row) in r.repetitions.iter().enumerate() {
        let _ = write!(s, "{i}");
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn mrlt_csv(real: &[f64], fake: &[f64]) -> String {
    let mut s = String::from("holes,mrlt_real,mrlt_fake\n");
    for (i, (a, b)) in real.iter().zip(fake).enumerate() {
        let _ = writeln!(s, "{i},{a},{b}");
    }
    s
}

/// `eval swd` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwdArtifact {
    pub config_hash: String,
    pub real: String,
    pub fake: String,
    pub report: SwdReport,
}

/// `eval gs` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GsArtifact {
    pub config_hash: String,
    pub real: String,
    pub fake: String,
    pub gs_x1e3: f64,
    pub report: GsReport,
}

/// `train` output besides checkpoints and the loss log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainArtifact {
    pub config_hash: String,
    pub epochs: usize,
    pub steps: usize,
    pub run_seed: u64,
    pub restarts: usize,
    pub collapse: Option<CollapseReport>,
    pub final_l_d: Option<f64>,
    pub final_l_g: Option<f64>,
    pub losses_finite: bool,
    pub wall_clock_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub train: u64,
    pub swd: u64,
    pub gs: u64,
    /// Seed of the training attempt that was kept (differs after restarts).
    pub run: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwdSummary {
    pub resolutions: Vec<usize>,
    pub patch_counts: Vec<usize>,
    pub per_level_x1e3: Vec<f64>,
    pub mean_x1e3: f64,
    pub repetitions: usize,
    pub n_slices: usize,
}

impl From<&SwdReport> for SwdSummary {
    fn from(r: &SwdReport) -> Self {
        SwdSummary {
            resolutions: r.resolutions.clone(),
            patch_counts: r.patch_counts.clone(),
            per_level_x1e3: r.per_level.clone(),
            mean_x1e3: r.mean,
            repetitions: r.repetitions.len(),
            n_slices: r.n_slices,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GsSummary {
    pub gs_x1e3: f64,
    pub mrlt_real: Vec<f64>,
    pub mrlt_fake: Vec<f64>,
    pub n_sets: usize,
    pub landmarks: usize,
    pub i_max: usize,
    pub gamma_real: f64,
    pub gamma_fake: f64,
    pub skipped_sets_real: usize,
    pub skipped_sets_fake: usize,
}

impl From<&GsReport> for GsSummary {
    fn from(r: &GsReport) -> Self {
        GsSummary {
            gs_x1e3: 1e3 * r.gs,
            mrlt_real: r.real.values.clone(),
            mrlt_fake: r.fake.values.clone(),
            n_sets: r.config.n_sets,
            landmarks: r.config.landmarks,
            i_max: r.config.i_max,
            gamma_real: r.real.gamma,
            gamma_fake: r.fake.gamma,
            skipped_sets_real: r.real.skipped_sets,
            skipped_sets_fake: r.fake.skipped_sets,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs: usize,
    pub steps: usize,
    pub restarts: usize,
    pub final_l_d: Option<f64>,
    pub final_l_g: Option<f64>,
    pub losses_finite: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format: String,
    pub config_hash: String,
    pub seeds: Seeds,
    pub swd: Option<SwdSummary>,
    pub gs: Option<GsSummary>,
    pub collapse: Option<CollapseReport>,
    pub training: Option<TrainingSummary>,
    /// Seconds; only recorded on request so reports stay reproducible.
    pub wall_clock_s: Option<f64>,
}

impl MetricsReport {
    fn numbers(&self) -> Vec<(&'static str, f64)> {
        let mut v = Vec::new();
        if let Some(w) = &self.swd {
            v.extend(w.per_level_x1e3.iter().map(|&x| ("swd.per_level_x1e3", x)));
            v.push(("swd.mean_x1e3", w.mean_x1e3));
        }
        if let Some(g) = &self.gs {
            v.push(("gs.gs_x1e3", g.gs_x1e3));
            v.extend(g.mrlt_real.iter().map(|&x| ("gs.mrlt_real", x)));
            v.extend(g.mrlt_fake.iter().map(|&x| ("gs.mrlt_fake", x)));
            v.push(("gs.gamma_real", g.gamma_real));
            v.push(("gs.gamma_fake", g.gamma_fake));
        }
        if let Some(c) = &self.collapse {
            v.push(("collapse.statistic", c.statistic));
            v.push(("collapse.tau", c.tau));
        }
        if let Some(t) = &self.training {
            v.extend(t.final_l_d.map(|x| ("training.final_l_d", x)));
            v.extend(t.final_l_g.map(|x| ("training.final_l_g", x)));
        }
        v.extend(self.wall_clock_s.map(|x| ("wall_clock_s", x)));
        v
    }

    /// Error unless every number in the report is finite.
    pub fn check_finite(&self) -> Result<()> {
        match self.numbers().into_iter().find(|(_, x)| !x.is_finite()) {
            Some((name, x)) => Err(Fail::numerical(format!("report field {name} is {x}")).into()),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareEntry {
    pub architecture: String,
    pub epochs: usize,
    /// Extremes of the generated samples used for evaluation.
    pub output_min: f64,
    pub output_max: f64,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub format: String,
    pub config_hash: String,
    pub entries: Vec<CompareEntry>,
    /// Whether the physics-guided model scored lower at the last epoch.
    pub physics_guided_better_gs: Option<bool>,
    pub physics_guided_better_swd: Option<bool>,
    pub wall_clock_s: Option<f64>,
}

pub fn compare_table_csv(r: &CompareReport) -> String {
    let mut s = String::from("architecture,epochs,gs_x1e3,swd_mean_x1e3,collapse_statistic,collapse_tau\n");
    for e in &r.entries {
        let m = &e.metrics;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            e.architecture,
            e.epochs,
            opt(m.gs.as_ref().map(|g| g.gs_x1e3)),
            opt(m.swd.as_ref().map(|w| w.mean_x1e3)),
            opt(m.collapse.map(|c| c.statistic)),
            opt(m.collapse.map(|c| c.tau)),
        );
    }
    s
}

/// Plain-text rendering of the comparison for the terminal.
pub fn compare_table_text(r: &CompareReport) -> String {
    let mut s = format!(
        "{:<16} {:>7} {:>12} {:>14}\n",
        "architecture", "epochs", "GS x1e3", "SWD x1e3"
    );
    for e in &r.entries {
        let gs = e.metrics.gs.as_ref().map_or(f64::NAN, |g| g.gs_x1e3);
        let swd = e.metrics.swd.as_ref().map_or(f64::NAN, |w| w.mean_x1e3);
        let _ = writeln!(s, "{:<16} {:>7} {:>12.4} {:>14.4}", e.architecture, e.epochs, gs, swd);
    }
    s
}
