#![allow(dead_code)]

use anchorloc::camera::{project, Distortion, Extrinsics, Intrinsics};
use anchorloc::{CameraParams, CameraSet, FrameObservations, ObservationEntry, Position3D, Representative};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn camera(id: u32, center: [f64; 3], target: [f64; 3], distortion: [f64; 5]) -> CameraParams {
    CameraParams::new(
        id,
        Intrinsics::new(800.0, 800.0, 640.0, 360.0).unwrap(),
        Extrinsics::look_at(center.into(), target.into(), Vector3::z()).unwrap(),
        Distortion::from_array(distortion).unwrap(),
        (1280, 720),
    )
    .unwrap()
}

/// Camera with randomized pose, intrinsics and distortion of the given scale.
pub fn random_camera(rng: &mut ChaCha8Rng, id: u32, distortion_scale: f64) -> CameraParams {
    let center = [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0), rng.random_range(2.0..6.0)];
    let target = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 0.0];
    let fx = rng.random_range(600.0..1000.0);
    let s = distortion_scale;
    CameraParams::new(
        id,
        Intrinsics::new(
            fx,
            fx * rng.random_range(0.97..1.03),
            rng.random_range(600.0..680.0),
            rng.random_range(330.0..390.0),
        )
        .unwrap(),
        Extrinsics::look_at(center.into(), target.into(), Vector3::z()).unwrap(),
        Distortion::new(
            s * rng.random_range(-0.3..0.1),
            s * rng.random_range(-0.05..0.1),
            s * rng.random_range(-2e-3..2e-3),
            s * rng.random_range(-2e-3..2e-3),
            s * rng.random_range(-0.02..0.02),
        )
        .unwrap(),
        (1280, 720),
    )
    .unwrap()
}

/// World point in front of `cam` whose normalized coordinates lie in
/// `[-half, half]²`, at a depth between 2 and 15 m.
pub fn point_in_view(rng: &mut ChaCha8Rng, cam: &CameraParams, half: f64) -> Position3D {
    let z = rng.random_range(2.0..15.0);
    let c = Vector3::new(rng.random_range(-half..half) * z, rng.random_range(-half..half) * z, z);
    let r = cam.extrinsics.rotation();
    r.transpose() * (c - cam.extrinsics.translation())
}

/// Six cameras on a 3.5 m ring around the origin, all aimed at the center.
pub fn ring_cameras(n: usize, distortion: [f64; 5]) -> CameraSet {
    let cams = (0..n)
        .map(|i| {
            let a = i as f64 / n as f64 * std::f64::consts::TAU;
            camera(i as u32, [7.0 * a.cos(), 7.0 * a.sin(), 3.5], [0.0, 0.0, 0.0], distortion)
        })
        .collect();
    CameraSet::new(cams).unwrap()
}

/// Exact observation of `x` in every camera that sees it.
pub fn observe(frame: u64, target: u32, x: &Position3D, cams: &CameraSet) -> FrameObservations {
    let entries = cams
        .iter()
        .map(|c| {
            if anchorloc::camera::is_visible(x, c) {
                ObservationEntry::visible(c.id, project(x, c).unwrap())
            } else {
                ObservationEntry::hidden(c.id)
            }
        })
        .collect();
    FrameObservations::new(frame, target, Representative::Head, entries).unwrap()
}
