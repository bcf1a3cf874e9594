//! Initial position estimate: each visible pixel is mapped onto a horizontal
//! reference plane through the camera's plane homography and the resulting
//! ground points are averaged.

use log::debug;

use crate::camera::{pixel_to_plane, CameraTolerances, Position3D};
use crate::error::Result;
use crate::observation::{CameraSet, FrameObservations};

#[derive(Debug, Clone, PartialEq)]
pub struct InitialEstimate {
    pub position: Position3D,
    pub cameras_used: Vec<u32>,
    pub per_camera_ground_points: Vec<(u32, Position3D)>,
}

/// Averages the plane intersections of every visible camera's pixel.
///
/// Cameras whose homography is degenerate, whose undistortion fails, or whose
/// ray meets the plane behind them are skipped; the last such error is
/// returned when no camera remains.
pub fn initial_estimate(
    obs: &FrameObservations,
    cams: &CameraSet,
    plane_height: f64,
) -> Result<InitialEstimate> {
    initial_estimate_with(obs, cams, plane_height, &CameraTolerances::default())
}

pub fn initial_estimate_with(
    obs: &FrameObservations,
    cams: &CameraSet,
    plane_height: f64,
    tol: &CameraTolerances,
) -> Result<InitialEstimate> {
    let mut points = Vec::new();
    let mut last_err = None;
    for (camera_id, pixel) in obs.visible() {
        let cam = cams.get(camera_id)?;
        match pixel_to_plane(&pixel, cam, plane_height, tol) {
            Ok(p) => points.push((camera_id, p)),
            Err(e) => {
                debug!(
                    "frame {} target {}: skipping camera {camera_id} in init: {e}",
                    obs.frame_index, obs.target_id
                );
                last_err = Some(e);
            }
        }
    }
    if points.is_empty() {
        return Err(last_err.unwrap_or_else(|| obs.no_visible_error()));
    }
    // Sum in camera-id order so the estimate does not depend on entry order.
    points.sort_by_key(|(id, _)| *id);
    let sum: Position3D = points.iter().map(|(_, p)| p).sum();
    let mut position = sum / points.len() as f64;
    position.z = plane_height;
    Ok(InitialEstimate {
        position,
        cameras_used: points.iter().map(|(id, _)| *id).collect(),
        per_camera_ground_points: points,
    })
}
