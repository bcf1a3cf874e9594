//! Localization metrics and the angular characterization of calibration
//! errors.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::{back_project_ray, CameraParams, CameraTolerances, Pixel2D, Position3D};
use crate::error::{Error, Result};

/// Depth along the optical axis at which probe pixels are back-projected.
pub const PROBE_DEPTH: f64 = 10.0;

/// Per-frame context needed for the breakdowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLabel {
    pub target_id: u32,
    pub n_visible: usize,
}

impl FrameLabel {
    pub fn is_single_camera(&self) -> bool {
        self.n_visible == 1
    }
}

/// Running mean/variance of distances plus the improvement count. Merging two
/// accumulators equals accumulating the concatenated samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub n: usize,
    mean: f64,
    m2: f64,
    improved: usize,
    init_sum: f64,
}

impl DistanceStats {
    pub fn push(&mut self, distance: f64, init_distance: f64) {
        self.n += 1;
        let d = distance - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (distance - self.mean);
        if distance < init_distance {
            self.improved += 1;
        }
        self.init_sum += init_distance;
    }

    pub fn merge(&mut self, other: &DistanceStats) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
        self.improved += other.improved;
        self.init_sum += other.init_sum;
    }

    pub fn summary(&self) -> Option<Summary> {
        (self.n > 0).then(|| Summary {
            n_frames: self.n,
            average_distance: self.mean,
            distance_std: (self.m2.max(0.0) / self.n as f64).sqrt(),
            improvement_ratio: self.improved as f64 / self.n as f64,
            init_average_distance: self.init_sum / self.n as f64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_frames: usize,
    /// Meters.
    pub average_distance: f64,
    /// Population standard deviation, meters.
    pub distance_std: f64,
    /// Fraction of frames strictly closer to the truth than the initial estimate.
    pub improvement_ratio: f64,
    pub init_average_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub overall: Summary,
    pub per_target: BTreeMap<u32, Summary>,
    pub single_camera: Option<Summary>,
    pub multi_camera: Option<Summary>,
}

impl MetricsReport {
    pub fn average_distance(&self) -> f64 {
        self.overall.average_distance
    }

    pub fn distance_std(&self) -> f64 {
        self.overall.distance_std
    }

    pub fn improvement_ratio(&self) -> f64 {
        self.overall.improvement_ratio
    }

    pub fn n_frames(&self) -> usize {
        self.overall.n_frames
    }
}

/// Accumulates labeled rows, possibly from several runs, into one report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsAccumulator {
    pub overall: DistanceStats,
    pub per_target: BTreeMap<u32, DistanceStats>,
    pub single_camera: DistanceStats,
    pub multi_camera: DistanceStats,
}

impl MetricsAccumulator {
    /// Single-camera rows are compared in the horizontal plane, since their
    /// height is pinned rather than estimated.
    pub fn push(&mut self, estimate: &Position3D, truth: &Position3D, initial: &Position3D, label: FrameLabel) {
        let dist = |p: &Position3D| {
            if label.is_single_camera() {
                (p.xy() - truth.xy()).norm()
            } else {
                (p - truth).norm()
            }
        };
        let (d, d0) = (dist(estimate), dist(initial));
        self.overall.push(d, d0);
        self.per_target.entry(label.target_id).or_default().push(d, d0);
        if label.is_single_camera() {
            self.single_camera.push(d, d0);
        } else {
            self.multi_camera.push(d, d0);
        }
    }

    pub fn merge(&mut self, other: &MetricsAccumulator) {
        self.overall.merge(&other.overall);
        for (id, s) in &other.per_target {
            self.per_target.entry(*id).or_default().merge(s);
        }
        self.single_camera.merge(&other.single_camera);
        self.multi_camera.merge(&other.multi_camera);
    }

    pub fn report(&self) -> Result<MetricsReport> {
        let overall = self
            .overall
            .summary()
            .ok_or_else(|| Error::invalid("cannot evaluate an empty set of frames"))?;
        Ok(MetricsReport {
            overall,
            per_target: self
                .per_target
                .iter()
                .filter_map(|(id, s)| s.summary().map(|s| (*id, s)))
                .collect(),
            single_camera: self.single_camera.summary(),
            multi_camera: self.multi_camera.summary(),
        })
    }
}

/// Scores index-aligned estimates, truths and initial estimates.
pub fn evaluate(
    estimates: &[Position3D],
    truth: &[Position3D],
    initials: &[Position3D],
    labels: &[FrameLabel],
) -> Result<MetricsReport> {
    let n = estimates.len();
    if truth.len() != n || initials.len() != n || labels.len() != n {
        return Err(Error::LengthMismatch(format!(
            "{n} estimates, {} truths, {} initials, {} labels",
            truth.len(),
            initials.len(),
            labels.len()
        )));
    }
    let mut acc = MetricsAccumulator::default();
    for i in 0..n {
        acc.push(&estimates[i], &truth[i], &initials[i], labels[i]);
    }
    acc.report()
}

/// 5 × 5 pixel grid spanning the central 80% of the image.
pub fn default_probes(cam: &CameraParams) -> Vec<Pixel2D> {
    let (w, h) = (cam.image_size.0 as f64, cam.image_size.1 as f64);
    let mut out = Vec::with_capacity(25);
    for j in 0..5 {
        for i in 0..5 {
            let f = |k: usize| 0.1 + 0.2 * k as f64;
            out.push(Pixel2D::new(w * f(i), h * f(j)));
        }
    }
    out
}

fn probe_point(pixel: &Pixel2D, cam: &CameraParams, tol: &CameraTolerances) -> Result<Position3D> {
    // The ray has unit depth along the optical axis.
    let ray = back_project_ray(pixel, cam, tol)?;
    Ok(cam.extrinsics.center() + ray * PROBE_DEPTH)
}

/// Mean angle in degrees between what two calibrations of the same camera
/// claim a pixel is looking at.
///
/// Each probe pixel is back-projected to the point at `PROBE_DEPTH` along the
/// optical axis under both calibrations, and the angle between those two
/// points is measured from the midpoint of the two camera centers. With equal
/// centers this is the angle between the viewing rays; a translation offset
/// shows up as the parallax it induces at the probe depth. The metric is
/// symmetric in its arguments.
pub fn angular_error(a: &CameraParams, b: &CameraParams, probes: &[Pixel2D]) -> Result<f64> {
    let tol = CameraTolerances::default();
    let mid = (a.extrinsics.center() + b.extrinsics.center()) / 2.0;
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in probes {
        let (Ok(pa), Ok(pb)) = (probe_point(p, a, &tol), probe_point(p, b, &tol)) else {
            continue;
        };
        let u: Vector3<f64> = pa - mid;
        let v: Vector3<f64> = pb - mid;
        sum += u.cross(&v).norm().atan2(u.dot(&v));
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoValidProbes);
    }
    Ok((sum / n as f64).to_degrees())
}
