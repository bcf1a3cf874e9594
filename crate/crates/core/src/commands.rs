//! File-based commands behind the `anchorloc` binary.
//!
//! Relative paths inside a config file resolve against the directory that
//! holds the config. Every command is a pure function of its inputs and
//! seeds, so re-running it reproduces its outputs byte for byte.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::camera::Position3D;
use crate::error::{Error, Result};
use crate::eval::{evaluate, FrameLabel, MetricsReport, Summary};
use crate::io::{
    detections_to_observations, fmt_f64, read_anchors, read_cameras, read_detections, read_estimates, read_heights,
    read_initials, read_json, read_observations, read_positions, write_anchors, write_cameras, write_estimates,
    write_heights, write_initials, write_json, write_observations, write_positions, write_table, EstimateRow,
    InitialRow, PositionRow,
};
use crate::localizer::{Method, Mode, SmoothingConfig, SolverConfig, DEFAULT_RHO};
use crate::observation::{CameraSet, Representative};
use crate::pipeline::{localize_observations, HeightTable, LocalizeOutput, SkippedFrame, NOMINAL_HEAD_HEIGHT};
use crate::scenario::{build_scenario, ScenarioSpec};
use crate::sim::{perturb_cameras, PerturbationSpec};
use crate::sweep::{run_sweep, CellKey, SweepOptions, SweepSpec, SWEEP_CSV_HEADER};
use crate::weights::{AnchorSet, DEFAULT_LAMBDA, MAX_ANCHORS};

pub const CAMERAS_TRUE: &str = "cameras_true.json";
pub const CAMERAS_PERTURBED: &str = "cameras_perturbed.json";
pub const ANCHORS: &str = "anchors.csv";
pub const TRAJECTORIES: &str = "trajectories.csv";
pub const HEIGHTS: &str = "heights.csv";
pub const OBSERVATIONS: &str = "observations.jsonl";
pub const ESTIMATES: &str = "estimates.csv";
pub const INITIALS: &str = "initials.csv";
pub const DIAGNOSTICS: &str = "diagnostics.json";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn config_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Expands a scenario into its artifact files. `seed` overrides the one in
/// the scenario file. Returns the written paths.
///
/// `trajectories.csv` holds the representative point of every target (the
/// point the observations are pixels of), not its ground contact.
pub fn cmd_simulate(spec_path: &Path, out_dir: &Path, seed: Option<u64>) -> Result<Vec<PathBuf>> {
    let mut spec: ScenarioSpec = read_json(spec_path)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let sc = build_scenario(&spec)?;
    let mut truth = Vec::new();
    for obs in &sc.observations {
        let p = sc.truth(obs)?;
        truth.push(PositionRow {
            frame: obs.frame_index,
            target_id: obs.target_id,
            x: p.x,
            y: p.y,
            z: p.z,
        });
    }
    let heights: BTreeMap<u32, f64> = sc.trajectories.iter().map(|t| (t.target_id, t.height)).collect();
    let written = [CAMERAS_TRUE, ANCHORS, TRAJECTORIES, HEIGHTS, OBSERVATIONS, "scenario.json"].map(|f| out_dir.join(f));
    write_cameras(&written[0], sc.cameras.as_slice())?;
    write_anchors(&written[1], sc.anchors.iter())?;
    write_positions(&written[2], &truth)?;
    write_heights(&written[3], &heights)?;
    write_observations(&written[4], &sc.observations)?;
    // The resolved spec, so the run can be repeated from the output alone.
    write_json(&written[5], &spec)?;
    info!(
        "simulated {} cameras, {} anchors, {} observations",
        sc.cameras.len(),
        sc.anchors.len(),
        sc.observations.len()
    );
    Ok(written.to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbConfig {
    /// Calibrated camera file to perturb.
    pub cameras: PathBuf,
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub seed: u64,
}

/// Writes `cameras_perturbed.json` into `out_dir`.
pub fn cmd_perturb(config_path: &Path, out_dir: &Path, seed: Option<u64>) -> Result<PathBuf> {
    let cfg: PerturbConfig = read_json(config_path)?;
    let cams = read_cameras(&resolve(&config_dir(config_path), &cfg.cameras))?;
    let perturbed = perturb_cameras(&cams, &cfg.perturbation, seed.unwrap_or(cfg.seed))?;
    let out = out_dir.join(CAMERAS_PERTURBED);
    write_cameras(&out, &perturbed)?;
    Ok(out)
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

fn default_rho() -> f64 {
    DEFAULT_RHO
}

fn default_batch() -> usize {
    1
}

fn default_nominal_height() -> f64 {
    NOMINAL_HEAD_HEIGHT
}

/// Settings of one localization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Use only the first `n` anchors of each camera, by anchor id.
    #[serde(default)]
    pub anchor_count_limit: Option<usize>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Body point taken from detection boxes. Observation files carry their own.
    #[serde(default)]
    pub representative: Option<Representative>,
    /// Calibration the run trusts (typically the perturbed one).
    pub cameras: PathBuf,
    #[serde(default)]
    pub anchors: Option<PathBuf>,
    /// Exactly one of `observations` and `detections` must be set.
    #[serde(default)]
    pub observations: Option<PathBuf>,
    #[serde(default)]
    pub detections: Option<PathBuf>,
    /// Per-target heights; targets not listed use `nominal_height`.
    #[serde(default)]
    pub heights: Option<PathBuf>,
    #[serde(default = "default_nominal_height")]
    pub nominal_height: f64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.observations.is_some() == self.detections.is_some() {
            return Err(Error::invalid("set exactly one of `observations` and `detections`"));
        }
        if self.mode == Mode::Anchor && self.anchors.is_none() {
            return Err(Error::invalid("ANCHOR mode needs an `anchors` file"));
        }
        if let Some(n) = self.anchor_count_limit {
            if n == 0 || n > MAX_ANCHORS {
                return Err(Error::invalid(format!("anchor_count_limit must be in 1..={MAX_ANCHORS}, got {n}")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.nominal_height.is_finite() && self.nominal_height >= 0.0) {
            return Err(Error::invalid(format!("invalid nominal_height {}", self.nominal_height)));
        }
        self.smoothing().validate()?;
        self.solver.validate()
    }

    pub fn smoothing(&self) -> SmoothingConfig {
        SmoothingConfig {
            batch_size: self.batch_size,
            rho: self.rho,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub max: f64,
}

impl Spread {
    fn of(values: impl Iterator<Item = f64>) -> Option<Self> {
        let (mut n, mut sum, mut max) = (0usize, 0.0, f64::NEG_INFINITY);
        for v in values {
            n += 1;
            sum += v;
            max = max.max(v);
        }
        (n > 0).then(|| Spread { mean: sum / n as f64, max })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub frame: u64,
    pub target_id: u32,
    pub message: String,
}

/// Run summary written next to the estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub mode: Mode,
    pub anchor_count_limit: Option<usize>,
    pub batch_size: usize,
    pub rho: f64,
    pub n_observations: usize,
    pub n_estimates: usize,
    pub n_converged: usize,
    pub n_height_fixed: usize,
    pub iterations: Option<Spread>,
    /// Per-frame RMS of the optimized residual, pixels.
    pub residual_rms_px: Option<Spread>,
    pub skipped: Vec<SkippedFrame>,
    /// Frames whose solve failed; their estimate is the initial estimate.
    pub failures: Vec<FailureRecord>,
}

/// Runs a localization config and writes `estimates.csv`, `initials.csv`
/// and `diagnostics.json` to `out_dir` (or the config's `output_dir`).
pub fn cmd_localize(config_path: &Path, out_dir: Option<&Path>) -> Result<Diagnostics> {
    let cfg: RunConfig = read_json(config_path)?;
    cfg.validate()?;
    let base = config_dir(config_path);
    let out_dir = match (out_dir, &cfg.output_dir) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(d)) => resolve(&base, d),
        (None, None) => return Err(Error::invalid("no output directory: pass --out or set `output_dir`")),
    };
    let cams = CameraSet::new(read_cameras(&resolve(&base, &cfg.cameras))?)?;
    let observations = match (&cfg.observations, &cfg.detections) {
        (Some(p), _) => read_observations(&resolve(&base, p))?,
        (None, Some(p)) => {
            let ids: Vec<u32> = cams.iter().map(|c| c.id).collect();
            let rep = cfg.representative.unwrap_or(Representative::Head);
            detections_to_observations(&read_detections(&resolve(&base, p))?, &ids, rep)?
        }
        (None, None) => unreachable!("validated"),
    };
    let mut heights = HeightTable::nominal(cfg.nominal_height);
    if let Some(p) = &cfg.heights {
        heights.known = read_heights(&resolve(&base, p))?;
    }
    let anchors = match &cfg.anchors {
        Some(p) => {
            let set = AnchorSet::new(read_anchors(&resolve(&base, p))?)?;
            Some(match cfg.anchor_count_limit {
                Some(n) => set.limited(n),
                None => set,
            })
        }
        None => None,
    };
    let method = match (cfg.mode, &anchors) {
        (Mode::Nominal, _) => Method::Nominal,
        (Mode::Anchor, Some(a)) => Method::Anchor {
            anchors: a,
            lambda: cfg.lambda,
        },
        (Mode::Anchor, None) => unreachable!("validated"),
    };
    let out = localize_observations(&observations, &cams, &cams, method, &heights, &cfg.smoothing(), &cfg.solver)?;
    write_localize_outputs(&out_dir, &out)?;
    let diag = diagnostics(&cfg, observations.len(), &out);
    write_json(&out_dir.join(DIAGNOSTICS), &diag)?;
    info!(
        "localized {} of {} observations ({} failed, {} skipped)",
        diag.n_estimates,
        diag.n_observations,
        diag.failures.len(),
        diag.skipped.len()
    );
    Ok(diag)
}

fn write_localize_outputs(dir: &Path, out: &LocalizeOutput) -> Result<()> {
    let estimates: Vec<EstimateRow> = out
        .outcomes
        .iter()
        .map(|o| EstimateRow {
            frame: o.frame_index,
            target_id: o.target_id,
            x: o.estimate.x,
            y: o.estimate.y,
            z: o.estimate.z,
            converged: o.result.as_ref().is_some_and(|r| r.converged),
            objective: o.result.as_ref().map_or(f64::NAN, |r| r.final_objective),
        })
        .collect();
    let initials: Vec<InitialRow> = out
        .outcomes
        .iter()
        .map(|o| InitialRow {
            frame: o.frame_index,
            target_id: o.target_id,
            x: o.initial.x,
            y: o.initial.y,
            z: o.initial.z,
            n_visible: o.n_visible,
        })
        .collect();
    write_estimates(&dir.join(ESTIMATES), &estimates)?;
    write_initials(&dir.join(INITIALS), &initials)
}

fn diagnostics(cfg: &RunConfig, n_observations: usize, out: &LocalizeOutput) -> Diagnostics {
    let results = || out.outcomes.iter().filter_map(|o| o.result.as_ref());
    Diagnostics {
        mode: cfg.mode,
        anchor_count_limit: cfg.anchor_count_limit,
        batch_size: cfg.batch_size,
        rho: cfg.rho,
        n_observations,
        n_estimates: out.outcomes.len(),
        n_converged: results().filter(|r| r.converged).count(),
        n_height_fixed: results().filter(|r| r.height_fixed).count(),
        iterations: Spread::of(results().map(|r| r.iterations as f64)),
        residual_rms_px: Spread::of(results().map(|r| {
            let n = r.per_camera_residuals.len().max(1) as f64;
            (r.final_objective / n).sqrt()
        })),
        skipped: out.skipped.clone(),
        failures: out
            .outcomes
            .iter()
            .filter_map(|o| {
                o.failure.as_ref().map(|m| FailureRecord {
                    frame: o.frame_index,
                    target_id: o.target_id,
                    message: m.clone(),
                })
            })
            .collect(),
    }
}

/// Scores estimates against the truth, joining rows on (frame, target).
/// Truth may cover frames without an estimate; the reverse is an error.
/// Frame labels come from the `n_visible` column of the initials.
pub fn cmd_evaluate(estimates: &Path, truth: &Path, initials: &Path, out_dir: &Path) -> Result<MetricsReport> {
    let est = read_estimates(estimates)?;
    let init: BTreeMap<(u64, u32), InitialRow> = keyed(read_initials(initials)?, |r| (r.frame, r.target_id), initials)?;
    let truth: BTreeMap<(u64, u32), PositionRow> = keyed(read_positions(truth)?, |r| (r.frame, r.target_id), truth)?;
    let mut seen = BTreeSet::new();
    let (mut e, mut t, mut i, mut labels) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for r in &est {
        let key = (r.frame, r.target_id);
        if !seen.insert(key) {
            return Err(Error::invalid(format!("estimate for frame {} target {} listed twice", key.0, key.1)));
        }
        let missing = |what: &str| Error::invalid(format!("no {what} row for frame {} target {}", key.0, key.1));
        let tr = truth.get(&key).ok_or_else(|| missing("truth"))?;
        let ir = init.get(&key).ok_or_else(|| missing("initial"))?;
        e.push(Position3D::new(r.x, r.y, r.z));
        t.push(tr.position());
        i.push(Position3D::new(ir.x, ir.y, ir.z));
        labels.push(FrameLabel {
            target_id: r.target_id,
            n_visible: ir.n_visible,
        });
    }
    if init.len() != est.len() {
        return Err(Error::LengthMismatch(format!("{} estimates, {} initials", est.len(), init.len())));
    }
    let report = evaluate(&e, &t, &i, &labels)?;
    write_json(&out_dir.join(METRICS_JSON), &report)?;
    write_metrics_csv(&out_dir.join(METRICS_CSV), &report)?;
    Ok(report)
}

fn keyed<T>(rows: Vec<T>, key: impl Fn(&T) -> (u64, u32), path: &Path) -> Result<BTreeMap<(u64, u32), T>> {
    let mut out = BTreeMap::new();
    for r in rows {
        let k = key(&r);
        if out.insert(k, r).is_some() {
            return Err(Error::invalid(format!(
                "{}: frame {} target {} listed twice",
                path.display(),
                k.0,
                k.1
            )));
        }
    }
    Ok(out)
}

pub const METRICS_CSV_HEADER: [&str; 7] = [
    "scope",
    "target_id",
    "n_frames",
    "average_distance",
    "distance_std",
    "improvement_ratio",
    "init_average_distance",
];

fn write_metrics_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let record = |scope: &str, id: Option<u32>, s: &Summary| {
        vec![
            scope.to_string(),
            id.map(|v| v.to_string()).unwrap_or_default(),
            s.n_frames.to_string(),
            fmt_f64(s.average_distance),
            fmt_f64(s.distance_std),
            fmt_f64(s.improvement_ratio),
            fmt_f64(s.init_average_distance),
        ]
    };
    let mut rows = vec![record("overall", None, &report.overall)];
    rows.extend(report.per_target.iter().map(|(id, s)| record("target", Some(*id), s)));
    if let Some(s) = &report.single_camera {
        rows.push(record("single_camera", None, s));
    }
    if let Some(s) = &report.multi_camera {
        rows.push(record("multi_camera", None, s));
    }
    write_table(path, &METRICS_CSV_HEADER, rows)
}

/// What a sweep did: the cells it would run on a dry run, else the CSV path.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepOutcome {
    DryRun(Vec<CellKey>),
    Written { csv: PathBuf, rows: usize, failures: usize },
}

/// Runs a sweep spec into `<out_dir>/<name>.csv`, keeping one JSON file per
/// finished cell under `<out_dir>/cells/<name>/` so an interrupted run
/// resumes where it stopped. `seed` overrides the scenario seed.
pub fn cmd_sweep(spec_path: &Path, out_dir: &Path, jobs: usize, dry_run: bool, seed: Option<u64>) -> Result<SweepOutcome> {
    let mut spec: SweepSpec = read_json(spec_path)?;
    if let Some(s) = seed {
        spec.scenario.seed = s;
    }
    spec.validate()?;
    if dry_run {
        return Ok(SweepOutcome::DryRun(spec.cells()));
    }
    let opts = SweepOptions {
        cell_dir: Some(out_dir.join("cells").join(&spec.name)),
        jobs,
    };
    let table = run_sweep(&spec, &opts)?;
    let csv = out_dir.join(format!("{}.csv", spec.name));
    write_table(&csv, &SWEEP_CSV_HEADER, table.rows.iter().map(|r| r.csv_record()))?;
    Ok(SweepOutcome::Written {
        csv,
        rows: table.rows.len(),
        failures: table.failures,
    })
}
