//! Monte Carlo sweeps over calibration-error levels, pixel noise levels,
//! smoothing settings and localization methods.
//!
//! A cell is one (perturbation row, pixel noise, smoothing, seed, sign)
//! combination. Each cell simulates one scenario and perturbs its cameras
//! once; every method is then run on the same observations from the same
//! initial estimates. Cells are independent and, when an output directory is
//! given, persisted one JSON file each so an interrupted sweep resumes where
//! it stopped. Table rows pool all seeds and signs of a
//! (row, noise, smoothing, method) group.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{FrameLabel, MetricsAccumulator, MetricsReport};
use crate::localizer::{Method, SmoothingConfig, SolverConfig};
use crate::observation::CameraSet;
use crate::pipeline::{localize_observations, HeightTable};
use crate::scenario::{build_scenario, ScenarioSpec};
use crate::sim::{perturb_cameras, PerturbationSpec, SignMode};
use crate::weights::DEFAULT_LAMBDA;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepMethod {
    /// Plain reprojection error with the perturbed calibration.
    Nominal,
    /// Anchor-adjusted error with the first `n_anchors` anchors per camera.
    Anchor { n_anchors: usize },
    /// Plain reprojection error with the true calibration.
    GroundTruth,
}

impl SweepMethod {
    pub fn label(&self) -> String {
        match self {
            SweepMethod::Nominal => "nominal".into(),
            SweepMethod::Anchor { n_anchors } => format!("anchor_{n_anchors}"),
            SweepMethod::GroundTruth => "ground_truth".into(),
        }
    }

    pub fn n_anchors(&self) -> usize {
        match self {
            SweepMethod::Anchor { n_anchors } => *n_anchors,
            _ => 0,
        }
    }
}

/// Perturbation magnitudes of one table row; the sign is set per cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationRow {
    pub rx_deg: f64,
    pub ry_deg: f64,
    pub t_m: f64,
    pub d_rel: f64,
}

impl PerturbationRow {
    pub fn with_sign(&self, sign_mode: SignMode) -> PerturbationSpec {
        PerturbationSpec {
            rx_deg: self.rx_deg,
            ry_deg: self.ry_deg,
            t_m: self.t_m,
            d_rel: self.d_rel,
            sign_mode,
        }
    }
}

/// Reference-plane height used to initialize each target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitHeight {
    /// The target's simulated height.
    True,
    /// One fixed height for every target.
    Nominal(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub name: String,
    /// Scenario template; its noise `pixel_sigma` and `seed` are overridden
    /// per cell.
    pub scenario: ScenarioSpec,
    pub seeds: Vec<u64>,
    pub rows: Vec<PerturbationRow>,
    pub pixel_sigmas: Vec<f64>,
    #[serde(default = "default_smoothing")]
    pub smoothing: Vec<SmoothingConfig>,
    pub methods: Vec<SweepMethod>,
    #[serde(default = "default_signs")]
    pub sign_modes: Vec<SignMode>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_init_height")]
    pub init_height: InitHeight,
}

fn default_smoothing() -> Vec<SmoothingConfig> {
    vec![SmoothingConfig {
        batch_size: 1,
        rho: 0.0,
    }]
}

fn default_signs() -> Vec<SignMode> {
    vec![SignMode::Positive, SignMode::Negative]
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

fn default_init_height() -> InitHeight {
    InitHeight::True
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.solver.validate()?;
        let nonempty = [
            ("seeds", self.seeds.is_empty()),
            ("rows", self.rows.is_empty()),
            ("pixel_sigmas", self.pixel_sigmas.is_empty()),
            ("smoothing", self.smoothing.is_empty()),
            ("methods", self.methods.is_empty()),
            ("sign_modes", self.sign_modes.is_empty()),
        ];
        if let Some((name, _)) = nonempty.iter().find(|(_, empty)| *empty) {
            return Err(Error::invalid(format!("sweep `{}`: `{name}` is empty", self.name)));
        }
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(Error::invalid(format!("sweep name `{}` must be [A-Za-z0-9_-]+", self.name)));
        }
        for r in &self.rows {
            r.with_sign(SignMode::Both).validate()?;
        }
        for s in &self.smoothing {
            s.validate()?;
        }
        if self.pixel_sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::invalid("pixel_sigmas must be >= 0"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be finite and >= 0"));
        }
        for m in &self.methods {
            if let SweepMethod::Anchor { n_anchors } = m {
                if *n_anchors == 0 || *n_anchors > self.scenario.anchors_per_camera {
                    return Err(Error::invalid(format!(
                        "anchor method uses {n_anchors} anchors but the scenario samples {} per camera",
                        self.scenario.anchors_per_camera
                    )));
                }
            }
        }
        if let InitHeight::Nominal(h) = self.init_height {
            if !(h.is_finite() && h >= 0.0) {
                return Err(Error::invalid("nominal init height must be finite and >= 0"));
            }
        }
        Ok(())
    }

    /// Every cell in deterministic order.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for row in 0..self.rows.len() {
            for sigma in 0..self.pixel_sigmas.len() {
                for smoothing in 0..self.smoothing.len() {
                    for &seed in &self.seeds {
                        for &sign in &self.sign_modes {
                            out.push(CellKey {
                                row,
                                sigma,
                                smoothing,
                                seed,
                                sign,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub row: usize,
    pub sigma: usize,
    pub smoothing: usize,
    pub seed: u64,
    pub sign: SignMode,
}

impl CellKey {
    pub fn file_name(&self) -> String {
        let sign = match self.sign {
            SignMode::Both => "both",
            SignMode::Positive => "pos",
            SignMode::Negative => "neg",
        };
        format!(
            "r{:03}_p{:02}_s{:02}_seed{}_{sign}.json",
            self.row, self.sigma, self.smoothing, self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub key: CellKey,
    pub methods: Vec<(SweepMethod, MetricsAccumulator)>,
    /// Frames dropped before solving (no camera or no initialization).
    pub skipped: usize,
    /// Frames whose solve failed and kept the initial estimate.
    pub failures: BTreeMap<String, usize>,
}

/// Simulates one cell and scores every method on it.
pub fn run_cell(spec: &SweepSpec, key: &CellKey) -> Result<CellResult> {
    let mut scenario_spec = spec.scenario.clone();
    scenario_spec.noise.pixel_sigma = spec.pixel_sigmas[key.sigma];
    scenario_spec.seed = key.seed;
    let scenario = build_scenario(&scenario_spec)?;
    let perturbed = CameraSet::new(perturb_cameras(
        scenario.cameras.as_slice(),
        &spec.rows[key.row].with_sign(key.sign),
        key.seed,
    )?)?;
    let heights = match spec.init_height {
        InitHeight::True => HeightTable {
            known: scenario.trajectories.iter().map(|t| (t.target_id, t.height)).collect(),
            nominal: 0.0,
        },
        InitHeight::Nominal(h) => HeightTable::nominal(h),
    };
    let smoothing = spec.smoothing[key.smoothing];
    let mut methods = Vec::with_capacity(spec.methods.len());
    let mut failures = BTreeMap::new();
    let mut skipped = 0;
    for m in &spec.methods {
        let limited;
        let (cams, method) = match m {
            SweepMethod::Nominal => (&perturbed, Method::Nominal),
            SweepMethod::GroundTruth => (&scenario.cameras, Method::Nominal),
            SweepMethod::Anchor { n_anchors } => {
                limited = scenario.anchors.limited(*n_anchors);
                (
                    &perturbed,
                    Method::Anchor {
                        anchors: &limited,
                        lambda: spec.lambda,
                    },
                )
            }
        };
        let out = localize_observations(
            &scenario.observations,
            &perturbed,
            cams,
            method,
            &heights,
            &smoothing,
            &spec.solver,
        )?;
        skipped = out.skipped.len();
        let mut acc = MetricsAccumulator::default();
        for o in &out.outcomes {
            let obs_truth = scenario
                .trajectories
                .iter()
                .find(|t| t.target_id == o.target_id)
                .map(|t| t.point(o.frame_index as usize, scenario.representative))
                .ok_or_else(|| Error::invalid(format!("unknown target {}", o.target_id)))?;
            acc.push(
                &o.estimate,
                &obs_truth,
                &o.initial,
                FrameLabel {
                    target_id: o.target_id,
                    n_visible: o.n_visible,
                },
            );
            if o.failure.is_some() {
                *failures.entry(m.label()).or_insert(0) += 1;
            }
        }
        methods.push((*m, acc));
    }
    Ok(CellResult {
        key: *key,
        methods,
        skipped,
        failures,
    })
}

/// One pooled table row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub experiment: String,
    pub row: PerturbationRow,
    pub pixel_sigma: f64,
    pub smoothing: SmoothingConfig,
    pub method: SweepMethod,
    pub n_runs: usize,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub failures: usize,
}

impl SweepTable {
    /// Finds the pooled row for a (row, sigma, smoothing) index and method.
    pub fn get(&self, spec: &SweepSpec, row: usize, sigma: usize, smoothing: usize, method: SweepMethod) -> Option<&SweepRow> {
        self.rows.iter().find(|r| {
            r.row == spec.rows[row]
                && r.pixel_sigma == spec.pixel_sigmas[sigma]
                && r.smoothing == spec.smoothing[smoothing]
                && r.method == method
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Directory for per-cell JSON files; cells already present are loaded
    /// instead of recomputed.
    pub cell_dir: Option<PathBuf>,
    /// Worker threads; 0 or 1 runs sequentially.
    pub jobs: usize,
}

fn cell_path(dir: &Path, key: &CellKey) -> PathBuf {
    dir.join(key.file_name())
}

fn load_or_run(spec: &SweepSpec, key: &CellKey, opts: &SweepOptions) -> Result<CellResult> {
    if let Some(dir) = &opts.cell_dir {
        let path = cell_path(dir, key);
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| Error::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            if let Ok(cell) = serde_json::from_str::<CellResult>(&text) {
                if cell.key == *key {
                    return Ok(cell);
                }
            }
            info!("recomputing unreadable cell file {}", path.display());
        }
        let cell = run_cell(spec, key)?;
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string(&cell).map_err(|e| Error::invalid(e.to_string()))?;
        fs::write(&tmp, text)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|e| Error::Io {
                path: path.display().to_string(),
                source: e,
            })?;
        Ok(cell)
    } else {
        run_cell(spec, key)
    }
}

/// Runs (or resumes) every cell and pools the results into table rows.
pub fn run_sweep(spec: &SweepSpec, opts: &SweepOptions) -> Result<SweepTable> {
    spec.validate()?;
    if let Some(dir) = &opts.cell_dir {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
    }
    let keys = spec.cells();
    info!("sweep `{}`: {} cells", spec.name, keys.len());
    let cells: Vec<CellResult> = if opts.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::invalid(e.to_string()))?;
        pool.install(|| keys.par_iter().map(|k| load_or_run(spec, k, opts)).collect::<Result<Vec<_>>>())?
    } else {
        keys.iter().map(|k| load_or_run(spec, k, opts)).collect::<Result<Vec<_>>>()?
    };
    pool_cells(spec, &cells)
}

/// Pools cell results by (row, sigma, smoothing, method) in sorted key order.
pub fn pool_cells(spec: &SweepSpec, cells: &[CellResult]) -> Result<SweepTable> {
    let mut groups: BTreeMap<(usize, usize, usize, usize), (MetricsAccumulator, usize)> = BTreeMap::new();
    let mut failures = 0;
    let mut sorted: Vec<&CellResult> = cells.iter().collect();
    sorted.sort_by_key(|c| c.key);
    for cell in sorted {
        failures += cell.failures.values().sum::<usize>();
        for (m, acc) in &cell.methods {
            let Some(mi) = spec.methods.iter().position(|x| x == m) else {
                continue;
            };
            let g = groups
                .entry((cell.key.row, cell.key.sigma, cell.key.smoothing, mi))
                .or_default();
            g.0.merge(acc);
            g.1 += 1;
        }
    }
    let rows = groups
        .into_iter()
        .map(|((row, sigma, smoothing, mi), (acc, n_runs))| {
            Ok(SweepRow {
                experiment: spec.name.clone(),
                row: spec.rows[row],
                pixel_sigma: spec.pixel_sigmas[sigma],
                smoothing: spec.smoothing[smoothing],
                method: spec.methods[mi],
                n_runs,
                report: acc.report()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { rows, failures })
}

pub const SWEEP_CSV_HEADER: [&str; 21] = [
    "experiment",
    "rx_deg",
    "ry_deg",
    "t_m",
    "d_rel",
    "pixel_sigma",
    "batch_size",
    "rho",
    "method",
    "n_anchors",
    "n_runs",
    "n_frames",
    "average_distance",
    "distance_std",
    "improvement_ratio",
    "init_average_distance",
    "single_n",
    "single_average_distance",
    "single_distance_std",
    "multi_n",
    "multi_average_distance",
];

impl SweepRow {
    pub fn csv_record(&self) -> Vec<String> {
        let f = crate::io::fmt_f64;
        let opt = |s: Option<crate::eval::Summary>| match s {
            Some(s) => (s.n_frames.to_string(), f(s.average_distance), f(s.distance_std)),
            None => ("0".into(), String::new(), String::new()),
        };
        let single = opt(self.report.single_camera);
        let multi = opt(self.report.multi_camera);
        vec![
            self.experiment.clone(),
            f(self.row.rx_deg),
            f(self.row.ry_deg),
            f(self.row.t_m),
            f(self.row.d_rel),
            f(self.pixel_sigma),
            self.smoothing.batch_size.to_string(),
            f(self.smoothing.rho),
            self.method.label(),
            self.method.n_anchors().to_string(),
            self.n_runs.to_string(),
            self.report.n_frames().to_string(),
            f(self.report.average_distance()),
            f(self.report.distance_std()),
            f(self.report.improvement_ratio()),
            f(self.report.overall.init_average_distance),
            single.0,
            single.1,
            single.2,
            multi.0,
            multi.1,
        ]
    }
}
