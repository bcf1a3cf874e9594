//! Declarative synthetic scenarios: a JSON-describable recipe that expands
//! into true cameras, anchors, trajectories and observations.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraParams, Distortion, Extrinsics, Intrinsics};
use crate::error::{Error, Result};
use crate::observation::{CameraSet, FrameObservations, Representative};
use crate::sim::{
    render_observations, sample_all_anchors, simulate_trajectories, GroundTruthTrajectory, LensSpec,
    NoiseSpec, PerimeterLayout, SceneSpec, SimConfig,
};
use crate::weights::AnchorSet;

/// A camera placed at `position` looking at `target` (world z up).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LookAtCamera {
    pub position: [f64; 3],
    pub target: [f64; 3],
    #[serde(default)]
    pub lens: LensSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutSpec {
    Perimeter(PerimeterLayout),
    LookAt(Vec<LookAtCamera>),
}

impl LayoutSpec {
    pub fn build(&self, extent: (f64, f64)) -> Result<Vec<CameraParams>> {
        match self {
            LayoutSpec::Perimeter(p) => p.build(extent),
            LayoutSpec::LookAt(list) => list
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let (w, h) = c.lens.image_size;
                    CameraParams::new(
                        i as u32,
                        Intrinsics::new(c.lens.focal_px, c.lens.focal_px, w as f64 / 2.0, h as f64 / 2.0)?,
                        Extrinsics::look_at(c.position.into(), c.target.into(), Vector3::z())?,
                        Distortion::from_array(c.lens.distortion)?,
                        c.lens.image_size,
                    )
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub extent: (f64, f64),
    pub layout: LayoutSpec,
    pub anchors_per_camera: usize,
    pub n_targets: usize,
    pub n_frames: usize,
    /// Random-walk step standard deviation, meters per frame.
    pub step_sigma: f64,
    pub noise: NoiseSpec,
    #[serde(default = "default_representative")]
    pub representative: Representative,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_representative() -> Representative {
    Representative::Head
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise.pixel_sigma >= 0.0 && self.noise.anchor_pixel_sigma >= 0.0) {
            return Err(Error::invalid("noise levels must be >= 0"));
        }
        if self.n_targets == 0 || self.n_frames == 0 {
            return Err(Error::invalid("scenario needs at least one target and one frame"));
        }
        if self.anchors_per_camera == 0 {
            return Err(Error::invalid("anchors_per_camera must be >= 1"));
        }
        let s = &self.sim;
        if !(s.height_min > 0.0 && s.height_max >= s.height_min && s.anchor_height_max >= 0.0) {
            return Err(Error::invalid(format!("invalid simulation heights {s:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub scene: SceneSpec,
    pub cameras: CameraSet,
    pub anchors: AnchorSet,
    pub trajectories: Vec<GroundTruthTrajectory>,
    pub observations: Vec<FrameObservations>,
    pub representative: Representative,
}

impl Scenario {
    /// True position of the representative point behind an observation.
    pub fn truth(&self, obs: &FrameObservations) -> Result<crate::camera::Position3D> {
        let traj = self
            .trajectories
            .iter()
            .find(|t| t.target_id == obs.target_id)
            .ok_or_else(|| Error::invalid(format!("unknown target {}", obs.target_id)))?;
        let f = obs.frame_index as usize;
        if f >= traj.positions.len() {
            return Err(Error::invalid(format!("frame {f} outside trajectory {}", obs.target_id)));
        }
        Ok(traj.point(f, obs.representative))
    }

    pub fn target_height(&self, target_id: u32) -> Option<f64> {
        self.trajectories
            .iter()
            .find(|t| t.target_id == target_id)
            .map(|t| t.height)
    }
}

pub fn build_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let scene = SceneSpec {
        extent: spec.extent,
        cameras: spec.layout.build(spec.extent)?,
        anchors_per_camera: spec.anchors_per_camera,
        rng_seed: spec.seed,
    };
    scene.validate()?;
    let cameras = CameraSet::new(scene.cameras.clone())?;
    let anchors = sample_all_anchors(&scene, &spec.sim, spec.noise.anchor_pixel_sigma)?;
    let trajectories = simulate_trajectories(&scene, &spec.sim, spec.n_targets, spec.n_frames, spec.step_sigma)?;
    let observations = render_observations(&trajectories, &cameras, &spec.noise, spec.representative, spec.seed)?;
    Ok(Scenario {
        scene,
        cameras,
        anchors,
        trajectories,
        observations,
        representative: spec.representative,
    })
}
