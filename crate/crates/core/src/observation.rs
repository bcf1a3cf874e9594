//! Per-frame observation records and the camera collection they refer to.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::camera::{CameraParams, Pixel2D};
use crate::error::{Error, Result};

/// Which body point a target pixel stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "UPPERCASE")]
pub enum Representative {
    /// Top-center of the detection box; lies on the plane at target height.
    Head,
    /// Bottom-center of the detection box; lies on the ground plane.
    Ankle,
}

impl Representative {
    /// Plane height used by initialization and single-camera solves.
    pub fn plane_height(self, target_height: f64) -> f64 {
        match self {
            Representative::Head => target_height,
            Representative::Ankle => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationEntry {
    pub camera_id: u32,
    /// `None` when the target is not visible to this camera.
    pub pixel: Option<Pixel2D>,
}

impl ObservationEntry {
    pub fn visible(camera_id: u32, pixel: Pixel2D) -> Self {
        Self {
            camera_id,
            pixel: Some(pixel),
        }
    }

    pub fn hidden(camera_id: u32) -> Self {
        Self {
            camera_id,
            pixel: None,
        }
    }

    pub fn is_visible(&self) -> bool {
        self.pixel.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservations {
    pub frame_index: u64,
    pub target_id: u32,
    pub representative: Representative,
    pub entries: Vec<ObservationEntry>,
}

impl FrameObservations {
    pub fn new(
        frame_index: u64,
        target_id: u32,
        representative: Representative,
        entries: Vec<ObservationEntry>,
    ) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.camera_id) {
                return Err(Error::invalid(format!(
                    "frame {frame_index} target {target_id}: duplicate entry for camera {}",
                    e.camera_id
                )));
            }
            if let Some(p) = e.pixel {
                if !(p.x.is_finite() && p.y.is_finite()) {
                    return Err(Error::invalid(format!(
                        "frame {frame_index} target {target_id}: non-finite pixel for camera {}",
                        e.camera_id
                    )));
                }
            }
        }
        Ok(Self {
            frame_index,
            target_id,
            representative,
            entries,
        })
    }

    /// Visible `(camera_id, pixel)` pairs in entry order.
    pub fn visible(&self) -> impl Iterator<Item = (u32, Pixel2D)> + '_ {
        self.entries
            .iter()
            .filter_map(|e| e.pixel.map(|p| (e.camera_id, p)))
    }

    pub fn visible_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_visible()).count()
    }

    pub(crate) fn no_visible_error(&self) -> Error {
        Error::NoVisibleCamera {
            frame: self.frame_index,
            target_id: self.target_id,
        }
    }
}

/// Cameras addressable by id.
#[derive(Debug, Clone, Default)]
pub struct CameraSet {
    cameras: Vec<CameraParams>,
    index: BTreeMap<u32, usize>,
}

impl CameraSet {
    pub fn new(cameras: Vec<CameraParams>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, c) in cameras.iter().enumerate() {
            if index.insert(c.id, i).is_some() {
                return Err(Error::invalid(format!("duplicate camera id {}", c.id)));
            }
        }
        Ok(Self { cameras, index })
    }

    pub fn get(&self, id: u32) -> Result<&CameraParams> {
        self.index
            .get(&id)
            .map(|&i| &self.cameras[i])
            .ok_or(Error::UnknownCamera(id))
    }

    pub fn iter(&self) -> std::slice::Iter<'_, CameraParams> {
        self.cameras.iter()
    }

    pub fn as_slice(&self) -> &[CameraParams] {
        &self.cameras
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }
}

impl<'a> IntoIterator for &'a CameraSet {
    type Item = &'a CameraParams;
    type IntoIter = std::slice::Iter<'a, CameraParams>;

    fn into_iter(self) -> Self::IntoIter {
        self.cameras.iter()
    }
}
