//! Synthetic scenes: camera layouts, random-walk trajectories, anchors sampled
//! inside each camera's field of view, noisy pixel observations and perturbed
//! calibrations.
//!
//! Every random draw comes from a ChaCha8 stream derived from an explicit seed,
//! a stream kind and a sub-index (camera index, target index), so changing one
//! part of a scene never reshuffles another.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::camera::{
    is_visible, project, CameraParams, Distortion, Extrinsics, Intrinsics, Pixel2D, Position3D,
};
use crate::error::{Error, Result};
use crate::observation::{CameraSet, FrameObservations, ObservationEntry, Representative};
use crate::weights::{Anchor, AnchorSet};

#[derive(Debug, Clone, Copy)]
enum Stream {
    Trajectory = 1,
    Anchors = 2,
    Perturbation = 3,
    Observations = 4,
}

fn stream_rng(seed: u64, kind: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((kind as u64) << 40) | index);
    rng
}

/// Knobs the synthetic protocol leaves open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub height_min: f64,
    pub height_max: f64,
    pub anchor_height_max: f64,
    pub max_rejects: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            height_min: 1.5,
            height_max: 1.9,
            anchor_height_max: 2.5,
            max_rejects: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Length and width of the floor rectangle `[0, L] × [0, W]`, meters.
    pub extent: (f64, f64),
    pub cameras: Vec<CameraParams>,
    pub anchors_per_camera: usize,
    pub rng_seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.extent.0 > 0.0 && self.extent.1 > 0.0) {
            return Err(Error::invalid("scene extent must be positive"));
        }
        if self.cameras.is_empty() {
            return Err(Error::invalid("scene needs at least one camera"));
        }
        Ok(())
    }
}

/// Synthetic lens shared by generated layouts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LensSpec {
    pub image_size: (u32, u32),
    pub focal_px: f64,
    /// `[k1, k2, p1, p2, k3]`.
    pub distortion: [f64; 5],
}

impl Default for LensSpec {
    fn default() -> Self {
        Self {
            image_size: (1280, 720),
            focal_px: 800.0,
            distortion: [-0.3, 0.1, 0.0, 0.0, 0.0],
        }
    }
}

impl LensSpec {
    /// Lens used by the built-in layouts. Milder than the default so that 25%
    /// multiplicative coefficient noise moves view rays by about 0.56°
    /// rather than 1.3°.
    pub fn scene() -> Self {
        Self {
            distortion: [-0.2, 0.05, 0.0, 0.0, 0.0],
            ..Self::default()
        }
    }
}

/// Cameras evenly spaced along the floor perimeter, each facing the scene
/// center and tilted down so its optical axis meets the floor `aim_distance`
/// meters away (horizontally).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerimeterLayout {
    pub count: usize,
    pub mount_height: f64,
    pub aim_distance: f64,
    #[serde(default)]
    pub lens: LensSpec,
}

impl PerimeterLayout {
    pub fn build(&self, extent: (f64, f64)) -> Result<Vec<CameraParams>> {
        let (l, w) = extent;
        if self.count == 0 || !(self.mount_height > 0.0) || !(self.aim_distance > 0.0) {
            return Err(Error::invalid(format!("invalid perimeter layout {self:?}")));
        }
        let perimeter = 2.0 * (l + w);
        let center = Vector3::new(l / 2.0, w / 2.0, 0.0);
        let (iw, ih) = self.lens.image_size;
        let intrinsics = Intrinsics::new(
            self.lens.focal_px,
            self.lens.focal_px,
            iw as f64 / 2.0,
            ih as f64 / 2.0,
        )?;
        let distortion = Distortion::from_array(self.lens.distortion)?;
        (0..self.count)
            .map(|i| {
                let s = (i as f64 + 0.5) * perimeter / self.count as f64;
                let (x, y) = perimeter_point(s, l, w);
                let pos = Vector3::new(x, y, self.mount_height);
                let mut dir = center - Vector3::new(x, y, 0.0);
                if dir.norm() < 1e-9 {
                    dir = Vector3::x();
                }
                let dir = dir.normalize();
                let aim = Vector3::new(x, y, 0.0) + dir * self.aim_distance;
                let ext = Extrinsics::look_at(pos, aim, Vector3::z())?;
                CameraParams::new(i as u32, intrinsics, ext, distortion, self.lens.image_size)
            })
            .collect()
    }
}

fn perimeter_point(s: f64, l: f64, w: f64) -> (f64, f64) {
    if s < l {
        (s, 0.0)
    } else if s < l + w {
        (l, s - l)
    } else if s < 2.0 * l + w {
        (l - (s - l - w), w)
    } else {
        (0.0, w - (s - 2.0 * l - w))
    }
}

/// Twelve cameras around a 16 m × 12 m floor: the reduced scene used by the
/// sweeps.
pub fn desk_layout() -> PerimeterLayout {
    PerimeterLayout {
        count: 12,
        mount_height: 3.5,
        aim_distance: 7.0,
        lens: LensSpec::scene(),
    }
}

pub const DESK_EXTENT: (f64, f64) = (16.0, 12.0);

/// 47 cameras around a 49 m × 39 m exhibition-hall floor. Only the floor size
/// and camera count are meaningful; the placement is a plain perimeter ring.
pub fn hall_layout() -> PerimeterLayout {
    PerimeterLayout {
        count: 47,
        mount_height: 4.0,
        aim_distance: 10.0,
        lens: LensSpec::scene(),
    }
}

pub const HALL_EXTENT: (f64, f64) = (49.0, 39.0);

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthTrajectory {
    pub target_id: u32,
    pub height: f64,
    /// Ground positions (`z = 0`), one per frame.
    pub positions: Vec<Position3D>,
}

impl GroundTruthTrajectory {
    /// World point that the given representative pixel stands for.
    pub fn point(&self, frame: usize, representative: Representative) -> Position3D {
        let g = self.positions[frame];
        Position3D::new(g.x, g.y, representative.plane_height(self.height))
    }
}

fn reflect(mut v: f64, hi: f64) -> f64 {
    // Folding handles steps longer than the extent.
    let period = 2.0 * hi;
    v = v.rem_euclid(period);
    if v > hi {
        period - v
    } else {
        v
    }
}

/// Gaussian random walks on the floor, reflected at the extent boundary, with
/// a constant height per target drawn uniformly from the configured range.
pub fn simulate_trajectories(
    scene: &SceneSpec,
    cfg: &SimConfig,
    n_targets: usize,
    n_frames: usize,
    step_sigma: f64,
) -> Result<Vec<GroundTruthTrajectory>> {
    scene.validate()?;
    if n_frames == 0 {
        return Err(Error::invalid("n_frames must be >= 1"));
    }
    if !(step_sigma >= 0.0) {
        return Err(Error::invalid("step_sigma must be >= 0"));
    }
    let (l, w) = scene.extent;
    let step = Normal::new(0.0, step_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    (0..n_targets)
        .map(|t| {
            let mut rng = stream_rng(scene.rng_seed, Stream::Trajectory, t as u64);
            let height = if cfg.height_max > cfg.height_min {
                rng.random_range(cfg.height_min..cfg.height_max)
            } else {
                cfg.height_min
            };
            let mut x = rng.random_range(0.0..l);
            let mut y = rng.random_range(0.0..w);
            let mut positions = Vec::with_capacity(n_frames);
            positions.push(Position3D::new(x, y, 0.0));
            for _ in 1..n_frames {
                x = reflect(x + step.sample(&mut rng), l);
                y = reflect(y + step.sample(&mut rng), w);
                positions.push(Position3D::new(x, y, 0.0));
            }
            Ok(GroundTruthTrajectory {
                target_id: t as u32,
                height,
                positions,
            })
        })
        .collect()
}

/// Rejection-samples `n` anchors inside the floor extent (heights in
/// `[0, anchor_height_max]`) that the true camera sees, and observes them with
/// Gaussian pixel noise of standard deviation `anchor_pixel_sigma`.
pub fn sample_anchors(
    scene: &SceneSpec,
    cfg: &SimConfig,
    cam: &CameraParams,
    n: usize,
    anchor_pixel_sigma: f64,
) -> Result<Vec<Anchor>> {
    if n == 0 {
        return Err(Error::invalid("anchor count must be >= 1"));
    }
    let noise = Normal::new(0.0, anchor_pixel_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = stream_rng(scene.rng_seed, Stream::Anchors, cam.id as u64);
    let (l, w) = scene.extent;
    let mut out = Vec::with_capacity(n);
    let mut draws = 0;
    while out.len() < n {
        if draws >= cfg.max_rejects {
            return Err(Error::FovSamplingExhausted {
                camera_id: cam.id,
                draws,
            });
        }
        draws += 1;
        let p = Position3D::new(
            rng.random_range(0.0..l),
            rng.random_range(0.0..w),
            rng.random_range(0.0..=cfg.anchor_height_max),
        );
        if !is_visible(&p, cam) {
            continue;
        }
        let exact = project(&p, cam)?;
        let observed = exact + Pixel2D::new(noise.sample(&mut rng), noise.sample(&mut rng));
        out.push(Anchor {
            camera_id: cam.id,
            anchor_id: out.len() as u32,
            world: p,
            observed_pixel: observed,
        });
    }
    Ok(out)
}

pub fn sample_all_anchors(scene: &SceneSpec, cfg: &SimConfig, anchor_pixel_sigma: f64) -> Result<AnchorSet> {
    let mut all = Vec::new();
    for cam in &scene.cameras {
        all.extend(sample_anchors(scene, cfg, cam, scene.anchors_per_camera, anchor_pixel_sigma)?);
    }
    AnchorSet::new(all)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "UPPERCASE")]
pub enum SignMode {
    Both,
    Positive,
    Negative,
}

impl SignMode {
    fn draw(self, rng: &mut impl Rng) -> f64 {
        match self {
            SignMode::Positive => 1.0,
            SignMode::Negative => -1.0,
            SignMode::Both => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

/// Calibration error magnitudes, one row of the perturbation tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    /// Pitch offset, degrees.
    pub rx_deg: f64,
    /// Yaw offset, degrees.
    pub ry_deg: f64,
    /// Translation offset length, meters.
    pub t_m: f64,
    /// Relative distortion error.
    pub d_rel: f64,
    #[serde(default = "default_sign_mode")]
    pub sign_mode: SignMode,
}

fn default_sign_mode() -> SignMode {
    SignMode::Both
}

impl PerturbationSpec {
    pub fn zero() -> Self {
        Self {
            rx_deg: 0.0,
            ry_deg: 0.0,
            t_m: 0.0,
            d_rel: 0.0,
            sign_mode: SignMode::Both,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = [self.rx_deg, self.ry_deg, self.t_m, self.d_rel];
        if v.iter().all(|x| *x >= 0.0 && x.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid(format!("perturbation magnitudes must be finite and >= 0: {self:?}")))
        }
    }
}

fn unit_sphere(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Applies pitch/yaw offsets, a fixed-length translation offset with uniform
/// direction, and multiplicative distortion noise to every camera.
/// Intrinsics and roll are left untouched.
///
/// Orientation offsets turn the camera about its own center, so rotation and
/// translation errors stay independent and do not depend on where the world
/// origin is.
pub fn perturb_cameras(cams: &[CameraParams], spec: &PerturbationSpec, seed: u64) -> Result<Vec<CameraParams>> {
    spec.validate()?;
    Ok(cams
        .iter()
        .enumerate()
        .map(|(i, cam)| {
            let mut rng = stream_rng(seed, Stream::Perturbation, i as u64);
            let pitch = spec.sign_mode.draw(&mut rng) * spec.rx_deg.to_radians();
            let yaw = spec.sign_mode.draw(&mut rng) * spec.ry_deg.to_radians();
            let dir = unit_sphere(&mut rng);
            let mut d = cam.distortion.as_array();
            for c in d.iter_mut() {
                *c *= 1.0 + spec.sign_mode.draw(&mut rng) * spec.d_rel;
            }
            let mut out = cam.clone();
            out.extrinsics = cam
                .extrinsics
                .rotated_about_center(pitch, yaw, 0.0)
                .translated(&(dir * spec.t_m));
            out.distortion = Distortion {
                k1: d[0],
                k2: d[1],
                p1: d[2],
                p2: d[3],
                k3: d[4],
            };
            out
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Target pixel noise standard deviation per coordinate.
    pub pixel_sigma: f64,
    /// Anchor pixel noise standard deviation per coordinate.
    pub anchor_pixel_sigma: f64,
}

impl NoiseSpec {
    pub fn zero() -> Self {
        Self {
            pixel_sigma: 0.0,
            anchor_pixel_sigma: 0.0,
        }
    }
}

/// Observes every trajectory frame with every camera under the true
/// parameters, adding Gaussian pixel noise. Output is ordered by frame, then
/// target; entries follow camera order.
pub fn render_observations(
    trajectories: &[GroundTruthTrajectory],
    cams_true: &CameraSet,
    noise: &NoiseSpec,
    representative: Representative,
    seed: u64,
) -> Result<Vec<FrameObservations>> {
    let normal = Normal::new(0.0, noise.pixel_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let n_frames = trajectories.iter().map(|t| t.positions.len()).max().unwrap_or(0);
    let mut rngs: Vec<ChaCha8Rng> = trajectories
        .iter()
        .map(|t| stream_rng(seed, Stream::Observations, t.target_id as u64))
        .collect();
    let mut out = Vec::with_capacity(n_frames * trajectories.len());
    for f in 0..n_frames {
        for (traj, rng) in trajectories.iter().zip(rngs.iter_mut()) {
            if f >= traj.positions.len() {
                continue;
            }
            let x = traj.point(f, representative);
            let entries = cams_true
                .iter()
                .map(|cam| {
                    if is_visible(&x, cam) {
                        let p = project(&x, cam)?;
                        let n = Pixel2D::new(normal.sample(rng), normal.sample(rng));
                        Ok(ObservationEntry::visible(cam.id, p + n))
                    } else {
                        Ok(ObservationEntry::hidden(cam.id))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            out.push(FrameObservations::new(f as u64, traj.target_id, representative, entries)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::orthonormality_error;

    fn desk_scene(seed: u64) -> SceneSpec {
        SceneSpec {
            extent: DESK_EXTENT,
            cameras: desk_layout().build(DESK_EXTENT).unwrap(),
            anchors_per_camera: 10,
            rng_seed: seed,
        }
    }

    #[test]
    fn zero_step_gives_constant_trajectories() {
        let trajs = simulate_trajectories(&desk_scene(1), &SimConfig::default(), 3, 20, 0.0).unwrap();
        for t in &trajs {
            assert!(t.positions.iter().all(|p| *p == t.positions[0]));
            assert!((1.5..1.9).contains(&t.height));
        }
    }

    #[test]
    fn reflection_keeps_walk_inside() {
        for v in [-0.3, 16.4, 33.0, -40.0, 5.0] {
            let r = reflect(v, 16.0);
            assert!((0.0..=16.0).contains(&r), "{v} -> {r}");
        }
        let trajs = simulate_trajectories(&desk_scene(2), &SimConfig::default(), 4, 2000, 1.5).unwrap();
        for t in &trajs {
            for p in &t.positions {
                assert!(p.x >= 0.0 && p.x <= 16.0 && p.y >= 0.0 && p.y <= 12.0);
            }
        }
    }

    #[test]
    fn seeds_reproduce() {
        let a = simulate_trajectories(&desk_scene(5), &SimConfig::default(), 2, 50, 0.2).unwrap();
        let b = simulate_trajectories(&desk_scene(5), &SimConfig::default(), 2, 50, 0.2).unwrap();
        let c = simulate_trajectories(&desk_scene(6), &SimConfig::default(), 2, 50, 0.2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn anchors_are_visible_and_exact_without_noise() {
        let scene = desk_scene(3);
        let cfg = SimConfig::default();
        for cam in &scene.cameras {
            let anchors = sample_anchors(&scene, &cfg, cam, 10, 0.0).unwrap();
            assert_eq!(anchors.len(), 10);
            for a in &anchors {
                assert!(is_visible(&a.world, cam));
                assert_eq!(a.observed_pixel, project(&a.world, cam).unwrap());
                assert!(a.world.z >= 0.0 && a.world.z <= cfg.anchor_height_max);
            }
        }
    }

    #[test]
    fn anchor_sampling_gives_up() {
        let mut scene = desk_scene(3);
        // Floor entirely behind every camera.
        scene.extent = (0.01, 0.01);
        let cam = CameraParams::new(
            0,
            Intrinsics::new(800.0, 800.0, 640.0, 360.0).unwrap(),
            Extrinsics::look_at(
                Vector3::new(5.0, 5.0, 3.0),
                Vector3::new(10.0, 10.0, 0.0),
                Vector3::z(),
            )
            .unwrap(),
            Distortion::default(),
            (1280, 720),
        )
        .unwrap();
        let cfg = SimConfig {
            max_rejects: 500,
            ..SimConfig::default()
        };
        let err = sample_anchors(&scene, &cfg, &cam, 2, 0.0).unwrap_err();
        assert!(matches!(err, Error::FovSamplingExhausted { draws: 500, .. }));
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let cams = desk_layout().build(DESK_EXTENT).unwrap();
        let out = perturb_cameras(&cams, &PerturbationSpec::zero(), 9).unwrap();
        for (a, b) in cams.iter().zip(&out) {
            assert!((a.extrinsics.rotation() - b.extrinsics.rotation()).amax() < 1e-15);
            assert_eq!(a.extrinsics.translation(), b.extrinsics.translation());
            assert_eq!(a.distortion, b.distortion);
            assert_eq!(a.intrinsics, b.intrinsics);
        }
    }

    #[test]
    fn perturbed_rotations_stay_orthonormal() {
        let cams = desk_layout().build(DESK_EXTENT).unwrap();
        let spec = PerturbationSpec {
            rx_deg: 1.5,
            ry_deg: 1.5,
            t_m: 0.25,
            d_rel: 0.25,
            sign_mode: SignMode::Both,
        };
        let mut draws = 0;
        for seed in 0..84 {
            for c in perturb_cameras(&cams, &spec, seed).unwrap() {
                let r = c.extrinsics.rotation();
                assert!(orthonormality_error(r) < 1e-10);
                assert!((r.determinant() - 1.0).abs() < 1e-10);
                draws += 1;
            }
        }
        assert!(draws >= 1000);
    }

    #[test]
    fn perturbation_magnitudes() {
        let cams = desk_layout().build(DESK_EXTENT).unwrap();
        let spec = PerturbationSpec {
            rx_deg: 0.0,
            ry_deg: 0.0,
            t_m: 0.1,
            d_rel: 0.2,
            sign_mode: SignMode::Positive,
        };
        for (a, b) in cams.iter().zip(perturb_cameras(&cams, &spec, 4).unwrap()) {
            let dt = b.extrinsics.translation() - a.extrinsics.translation();
            assert!((dt.norm() - 0.1).abs() < 1e-12);
            assert!((b.distortion.k1 - a.distortion.k1 * 1.2).abs() < 1e-15);
            assert!((a.extrinsics.rotation() - b.extrinsics.rotation()).amax() < 1e-15);
        }
    }

    #[test]
    fn noiseless_observations_reproject() {
        let scene = desk_scene(11);
        let cams = CameraSet::new(scene.cameras.clone()).unwrap();
        let trajs = simulate_trajectories(&scene, &SimConfig::default(), 2, 30, 0.2).unwrap();
        let obs = render_observations(&trajs, &cams, &NoiseSpec::zero(), Representative::Head, 3).unwrap();
        assert_eq!(obs.len(), 60);
        for o in &obs {
            let truth = trajs[o.target_id as usize].point(o.frame_index as usize, Representative::Head);
            for (id, p) in o.visible() {
                assert_eq!(p, project(&truth, cams.get(id).unwrap()).unwrap());
            }
        }
    }

    #[test]
    fn pixel_noise_statistics() {
        let scene = desk_scene(12);
        let cams = CameraSet::new(scene.cameras.clone()).unwrap();
        let trajs = simulate_trajectories(&scene, &SimConfig::default(), 4, 800, 0.3).unwrap();
        let noise = NoiseSpec {
            pixel_sigma: 3.0,
            anchor_pixel_sigma: 0.0,
        };
        let obs = render_observations(&trajs, &cams, &noise, Representative::Head, 8).unwrap();
        let mut du = Vec::new();
        let mut dv = Vec::new();
        for o in &obs {
            let truth = trajs[o.target_id as usize].point(o.frame_index as usize, Representative::Head);
            for (id, p) in o.visible() {
                let e = p - project(&truth, cams.get(id).unwrap()).unwrap();
                du.push(e.x);
                dv.push(e.y);
            }
        }
        assert!(du.len() >= 10_000, "only {} samples", du.len());
        for s in [&du, &dv] {
            let n = s.len() as f64;
            let mean = s.iter().sum::<f64>() / n;
            let std = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!((std - 3.0).abs() < 0.15, "std {std}");
        }
    }
}
