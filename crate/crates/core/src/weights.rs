//! Affine anchor weights.
//!
//! For one camera with surveyed anchors `a_j` and a reference position `x̄`,
//! the weights solve
//!
//! ```text
//! min_w  ‖x̄ − Σ w_j a_j‖² + λ ‖w‖²   s.t.  Σ w_j = 1
//! ```
//!
//! through the `(n + 1) × (n + 1)` KKT system
//!
//! ```text
//! [ AᵀA + λI   1 ] [ w ]   [ Aᵀx̄ ]
//! [ 1ᵀ         0 ] [ ν ] = [ 1   ]
//! ```
//!
//! Anchors and `x̄` are shifted by the anchor centroid before the system is
//! assembled; the fit term is invariant under that shift and the Gram matrix
//! is better conditioned.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::camera::{Pixel2D, Position3D};
use crate::error::{Error, Result};

/// Upper bound on anchors per camera.
pub const MAX_ANCHORS: usize = 32;

/// Default ridge penalty (anchor coordinates in meters).
pub const DEFAULT_LAMBDA: f64 = 1e-2;

// Relative pivot magnitude below which the KKT matrix counts as singular.
const PIVOT_RTOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub camera_id: u32,
    pub anchor_id: u32,
    /// Surveyed world position.
    pub world: Position3D,
    /// Pixel at which the anchor is observed in this camera.
    pub observed_pixel: Pixel2D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorWeights {
    pub camera_id: u32,
    pub weights: Vec<(u32, f64)>,
    pub lambda_used: f64,
}

impl AnchorWeights {
    pub fn sum(&self) -> f64 {
        self.weights.iter().map(|(_, w)| w).sum()
    }

    pub fn norm(&self) -> f64 {
        self.weights.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }
}

/// Anchors grouped per camera, each list ordered by `anchor_id`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnchorSet {
    by_camera: BTreeMap<u32, Vec<Anchor>>,
}

impl AnchorSet {
    pub fn new(anchors: impl IntoIterator<Item = Anchor>) -> Result<Self> {
        let mut by_camera: BTreeMap<u32, Vec<Anchor>> = BTreeMap::new();
        for a in anchors {
            if !(a.world.iter().all(|v| v.is_finite())
                && a.observed_pixel.iter().all(|v| v.is_finite()))
            {
                return Err(Error::invalid(format!(
                    "anchor {} of camera {} has non-finite coordinates",
                    a.anchor_id, a.camera_id
                )));
            }
            by_camera.entry(a.camera_id).or_default().push(a);
        }
        for (camera_id, list) in by_camera.iter_mut() {
            list.sort_by_key(|a| a.anchor_id);
            if list.windows(2).any(|w| w[0].anchor_id == w[1].anchor_id) {
                return Err(Error::invalid(format!("camera {camera_id} has duplicate anchor ids")));
            }
        }
        Ok(Self { by_camera })
    }

    pub fn for_camera(&self, camera_id: u32) -> &[Anchor] {
        self.by_camera.get(&camera_id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Keeps only the first `n` anchors of every camera by anchor id.
    pub fn limited(&self, n: usize) -> AnchorSet {
        AnchorSet {
            by_camera: self
                .by_camera
                .iter()
                .map(|(k, v)| (*k, v.iter().take(n).copied().collect()))
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Anchor> {
        self.by_camera.values().flatten()
    }

    pub fn camera_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.by_camera.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.by_camera.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Solves the ridge-penalized affine weight problem for one camera.
pub fn solve_weights(anchors: &[Anchor], x_bar: &Position3D, lambda: f64) -> Result<AnchorWeights> {
    let camera_id = anchors.first().map(|a| a.camera_id);
    let Some(camera_id) = camera_id else {
        return Err(Error::EmptyAnchorList { camera_id: u32::MAX });
    };
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let n = anchors.len();
    if n > MAX_ANCHORS {
        return Err(Error::TooManyAnchors {
            camera_id,
            count: n,
            max: MAX_ANCHORS,
        });
    }
    let ids = || anchors.iter().map(|a| a.anchor_id);
    if n == 1 {
        return Ok(AnchorWeights {
            camera_id,
            weights: ids().map(|id| (id, 1.0)).collect(),
            lambda_used: lambda,
        });
    }

    let centroid: Position3D = anchors.iter().map(|a| a.world).sum::<Position3D>() / n as f64;
    let a = DMatrix::from_fn(3, n, |r, c| anchors[c].world[r] - centroid[r]);
    let target = x_bar - centroid;

    let mut kkt = DMatrix::zeros(n + 1, n + 1);
    let gram = a.transpose() * &a;
    kkt.view_mut((0, 0), (n, n)).copy_from(&gram);
    for i in 0..n {
        kkt[(i, i)] += lambda;
        kkt[(i, n)] = 1.0;
        kkt[(n, i)] = 1.0;
    }
    let mut rhs = DVector::zeros(n + 1);
    rhs.rows_mut(0, n).copy_from(&(a.transpose() * target));
    rhs[n] = 1.0;

    let lu = kkt.clone().full_piv_lu();
    let u = lu.u();
    let pivots = u.diagonal().map(f64::abs);
    if !(pivots.min() > PIVOT_RTOL * pivots.max()) {
        return Err(Error::SingularSystem { camera_id });
    }
    let sol = lu.solve(&rhs).ok_or(Error::SingularSystem { camera_id })?;
    // One round of iterative refinement keeps Σw = 1 at the 1e-15 level.
    let residual = &rhs - &kkt * &sol;
    let sol = match lu.solve(&residual) {
        Some(corr) => sol + corr,
        None => sol,
    };

    Ok(AnchorWeights {
        camera_id,
        weights: ids().zip(sol.iter().take(n).copied()).collect(),
        lambda_used: lambda,
    })
}
