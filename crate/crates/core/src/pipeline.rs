//! End-to-end localization over a batch of observations: initialization,
//! anchor weights, per-target windowed solves, and the recovery policy for
//! frames the solver cannot handle.

use std::collections::BTreeMap;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::camera::Position3D;
use crate::error::{Error, Result};
use crate::init::initial_estimate;
use crate::localizer::{solve_frame, solve_trajectory, LocalizationResult, Method, SmoothingConfig, SolverConfig};
use crate::observation::{CameraSet, FrameObservations};

/// Where the reference-plane height of a target comes from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HeightTable {
    pub known: BTreeMap<u32, f64>,
    /// Used for targets without a known height.
    pub nominal: f64,
}

/// Pedestrian head height assumed when nothing better is known.
pub const NOMINAL_HEAD_HEIGHT: f64 = 1.7;

impl HeightTable {
    pub fn nominal(height: f64) -> Self {
        Self {
            known: BTreeMap::new(),
            nominal: height,
        }
    }

    pub fn height(&self, target_id: u32) -> f64 {
        self.known.get(&target_id).copied().unwrap_or(self.nominal)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub frame_index: u64,
    pub target_id: u32,
    pub n_visible: usize,
    pub initial: Position3D,
    /// Solver output, or the initial estimate when the solve failed.
    pub estimate: Position3D,
    pub result: Option<LocalizationResult>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFrame {
    pub frame_index: u64,
    pub target_id: u32,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NoVisibleCamera,
    InitializationFailed,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocalizeOutput {
    /// Ordered by frame index, then target id.
    pub outcomes: Vec<FrameOutcome>,
    pub skipped: Vec<SkippedFrame>,
}

/// Errors that indicate bad inputs rather than a hard frame.
fn is_configuration_error(e: &Error) -> bool {
    matches!(
        e,
        Error::MissingWeights { .. }
            | Error::UnknownCamera(_)
            | Error::Invalid(_)
            | Error::TooManyAnchors { .. }
            | Error::LengthMismatch(_)
    )
}

/// Localizes every observation.
///
/// Initial estimates come from `init_cams`, the objective is built from
/// `solve_cams` (the two differ only when scoring against the true
/// calibration). Each target's frames are solved in windows of
/// `smoothing.batch_size`. A window that fails is retried frame by frame; a
/// frame that still fails keeps its initial estimate and is reported in
/// `failure`. Frames with no visible camera or no usable initialization are
/// skipped.
pub fn localize_observations(
    observations: &[FrameObservations],
    init_cams: &CameraSet,
    solve_cams: &CameraSet,
    method: Method<'_>,
    heights: &HeightTable,
    smoothing: &SmoothingConfig,
    solver: &SolverConfig,
) -> Result<LocalizeOutput> {
    smoothing.validate()?;
    solver.validate()?;
    let mut by_target: BTreeMap<u32, Vec<&FrameObservations>> = BTreeMap::new();
    for obs in observations {
        by_target.entry(obs.target_id).or_default().push(obs);
    }
    let mut out = LocalizeOutput::default();
    for (target_id, mut frames) in by_target {
        frames.sort_by_key(|o| o.frame_index);
        if frames.windows(2).any(|w| w[0].frame_index == w[1].frame_index) {
            return Err(Error::invalid(format!("target {target_id} has duplicate frames")));
        }
        let mut usable = Vec::with_capacity(frames.len());
        let mut inits = Vec::with_capacity(frames.len());
        let mut fallbacks = Vec::with_capacity(frames.len());
        for obs in frames {
            let plane = obs.representative.plane_height(heights.height(target_id));
            if obs.visible_count() == 0 {
                out.skipped.push(SkippedFrame {
                    frame_index: obs.frame_index,
                    target_id,
                    reason: SkipReason::NoVisibleCamera,
                });
                continue;
            }
            match initial_estimate(obs, init_cams, plane) {
                Ok(init) => {
                    usable.push(obs.clone());
                    inits.push(init.position);
                    fallbacks.push(init.per_camera_ground_points);
                }
                Err(e) if is_configuration_error(&e) => return Err(e),
                Err(e) => {
                    debug!("frame {} target {target_id}: initialization failed: {e}", obs.frame_index);
                    out.skipped.push(SkippedFrame {
                        frame_index: obs.frame_index,
                        target_id,
                        reason: SkipReason::InitializationFailed,
                    });
                }
            }
        }
        let Some(first) = usable.first() else { continue };
        let plane = first.representative.plane_height(heights.height(target_id));
        let solver = solver.with_fixed_height(plane);
        let results = solve_target(&usable, &inits, &fallbacks, solve_cams, method, smoothing, &solver)?;
        for ((obs, init), res) in usable.iter().zip(&inits).zip(results) {
            let (estimate, result, failure) = match res {
                Ok(r) => (r.position, Some(r), None),
                Err(e) => (*init, None, Some(e.to_string())),
            };
            out.outcomes.push(FrameOutcome {
                frame_index: obs.frame_index,
                target_id,
                n_visible: obs.visible_count(),
                initial: *init,
                estimate,
                result,
                failure,
            });
        }
    }
    out.outcomes.sort_by_key(|o| (o.frame_index, o.target_id));
    out.skipped.sort_by_key(|s| (s.frame_index, s.target_id));
    Ok(out)
}

fn solve_target(
    frames: &[FrameObservations],
    inits: &[Position3D],
    fallbacks: &[Vec<(u32, Position3D)>],
    cams: &CameraSet,
    method: Method<'_>,
    smoothing: &SmoothingConfig,
    solver: &SolverConfig,
) -> Result<Vec<Result<LocalizationResult>>> {
    match solve_trajectory(frames, inits, cams, method, smoothing, solver) {
        Ok(r) => return Ok(r.into_iter().map(Ok).collect()),
        Err(e) if is_configuration_error(&e) => return Err(e),
        Err(e) if smoothing.batch_size > 1 => {
            debug!("target {}: windowed solve failed ({e}), retrying per window", frames[0].target_id)
        }
        Err(_) => {}
    }
    // Retry window by window so one bad frame only affects itself.
    let mut out = Vec::with_capacity(frames.len());
    let mut start = 0;
    while start < frames.len() {
        let mut end = start + 1;
        while end < frames.len()
            && end - start < smoothing.batch_size
            && frames[end].frame_index == frames[end - 1].frame_index + 1
        {
            end += 1;
        }
        let single = SmoothingConfig {
            batch_size: end - start,
            ..*smoothing
        };
        match solve_trajectory(&frames[start..end], &inits[start..end], cams, method, &single, solver) {
            Ok(r) => out.extend(r.into_iter().map(Ok)),
            Err(e) if is_configuration_error(&e) => return Err(e),
            Err(_) => {
                for t in start..end {
                    let r = solve_with_fallbacks(&frames[t], &inits[t], &fallbacks[t], cams, method, solver);
                    match &r {
                        Err(e) if is_configuration_error(e) => return Err(r.unwrap_err()),
                        Err(e) => warn!("frame {} target {}: solve failed: {e}", frames[t].frame_index, frames[t].target_id),
                        Ok(_) => {}
                    }
                    out.push(r);
                }
            }
        }
        start = end;
    }
    Ok(out)
}

/// Solves from the mean initial estimate, then, if that start is unusable
/// (typically behind one of the cameras), from each camera's own plane point
/// in camera-id order.
fn solve_with_fallbacks(
    obs: &FrameObservations,
    init: &Position3D,
    fallbacks: &[(u32, Position3D)],
    cams: &CameraSet,
    method: Method<'_>,
    solver: &SolverConfig,
) -> Result<LocalizationResult> {
    let first = solve_frame(obs, cams, method, init, solver);
    let Err(err) = first else { return first };
    if is_configuration_error(&err) {
        return Err(err);
    }
    for (camera_id, start) in fallbacks {
        if let Ok(r) = solve_frame(obs, cams, method, start, solver) {
            debug!(
                "frame {} target {}: restarted from camera {camera_id}'s plane point",
                obs.frame_index, obs.target_id
            );
            return Ok(r);
        }
    }
    Err(err)
}
