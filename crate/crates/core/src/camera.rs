//! Camera imaging model: rigid transform, perspective division, Brown-Conrady
//! distortion (`k1, k2, p1, p2, k3`) and the pinhole intrinsic map.
//!
//! ```text
//! c  = R x + T
//! n  = (c1 / c3, c2 / c3)
//! r² = n1² + n2²
//! n' = n (1 + k1 r² + k2 r⁴ + k3 r⁶) + tangential(n)
//! u  = fx n'1 + cx,   v = fy n'2 + cy
//! ```
//!
//! Calibration error is expressed over a 15-entry parameter vector, see
//! [`param`]. Rotation entries are small pitch/yaw/roll increments applied in
//! the camera frame on top of the stored rotation, so the vector is always
//! evaluated at zero rotation increment.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, SMatrix, SVector, Vector2, Vector3};

use crate::error::{Error, Result};

pub type Position3D = Vector3<f64>;
pub type Pixel2D = Vector2<f64>;

/// Tolerances shared by the camera operations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraTolerances {
    pub depth_epsilon: f64,
    pub undistort_tol: f64,
    pub max_undistort_iters: usize,
    pub cond_max: f64,
    pub margin_px: f64,
}

impl Default for CameraTolerances {
    fn default() -> Self {
        Self {
            depth_epsilon: 1e-6,
            undistort_tol: 1e-10,
            max_undistort_iters: 50,
            cond_max: 1e12,
            margin_px: 0.0,
        }
    }
}

/// Indices into the perturbable parameter vector.
pub mod param {
    pub const PITCH: usize = 0;
    pub const YAW: usize = 1;
    pub const ROLL: usize = 2;
    pub const TX: usize = 3;
    pub const TY: usize = 4;
    pub const TZ: usize = 5;
    pub const K1: usize = 6;
    pub const K2: usize = 7;
    pub const P1: usize = 8;
    pub const P2: usize = 9;
    pub const K3: usize = 10;
    pub const FX: usize = 11;
    pub const FY: usize = 12;
    pub const CX: usize = 13;
    pub const CY: usize = 14;
    /// Number of perturbable parameters per camera.
    pub const COUNT: usize = 15;

    pub const NAMES: [&str; COUNT] = [
        "pitch", "yaw", "roll", "tx", "ty", "tz", "k1", "k2", "p1", "p2", "k3", "fx", "fy", "cx",
        "cy",
    ];
}

pub type ParamVector = SVector<f64, { param::COUNT }>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::invalid(format!("focal lengths must be positive, got ({fx}, {fy})")));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::invalid("principal point must be finite"));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    fn to_pixel(&self, n: &Vector2<f64>) -> Pixel2D {
        Pixel2D::new(self.fx * n.x + self.cx, self.fy * n.y + self.cy)
    }

    fn to_normalized(&self, p: &Pixel2D) -> Vector2<f64> {
        Vector2::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy)
    }
}

/// World-to-camera rigid transform, `c = R x + T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

/// Largest tolerated deviation of `RᵀR` from identity and `det R` from one.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

impl Extrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let err = orthonormality_error(&rotation);
        if !(err < ORTHONORMAL_TOL) {
            return Err(Error::invalid(format!(
                "rotation is not orthonormal (max |RᵀR - I| = {err:.3e})"
            )));
        }
        let det = rotation.determinant();
        if !((det - 1.0).abs() < ORTHONORMAL_TOL) {
            return Err(Error::invalid(format!("rotation determinant is {det}, expected +1")));
        }
        if !translation.iter().all(|t| t.is_finite()) {
            return Err(Error::invalid("translation must be finite"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Camera placed at `center` looking at `target`, with image rows pointing
    /// away from world `up` (x right, y down, z forward).
    pub fn look_at(center: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let forward = target - center;
        if forward.norm() < 1e-12 {
            return Err(Error::invalid("look_at target coincides with camera center"));
        }
        let z = forward.normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-9 {
            return Err(Error::invalid("look_at direction is parallel to up"));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * center);
        Self::new(rotation, translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera center in world coordinates, `-Rᵀ T`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, x: &Position3D) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// Applies a camera-frame pitch/yaw/roll increment (radians) to the
    /// rotation, leaving the translation vector untouched.
    pub fn rotated(&self, pitch: f64, yaw: f64, roll: f64) -> Self {
        let rotation = euler_increment(pitch, yaw, roll) * self.rotation;
        Self {
            rotation: reorthonormalize(&rotation),
            translation: self.translation,
        }
    }

    /// Like [`Extrinsics::rotated`] but keeps the camera center in place.
    pub fn rotated_about_center(&self, pitch: f64, yaw: f64, roll: f64) -> Self {
        if pitch == 0.0 && yaw == 0.0 && roll == 0.0 {
            return *self;
        }
        let center = self.center();
        let rotation = self.rotated(pitch, yaw, roll).rotation;
        Self {
            rotation,
            translation: -(rotation * center),
        }
    }

    pub fn translated(&self, delta: &Vector3<f64>) -> Self {
        Self {
            rotation: self.rotation,
            translation: self.translation + delta,
        }
    }
}

/// `Rz(roll) · Ry(yaw) · Rx(pitch)` about the camera axes.
pub fn euler_increment(pitch: f64, yaw: f64, roll: f64) -> Matrix3<f64> {
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    let (sr, cr) = roll.sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cp, -sp, 0.0, sp, cp);
    let ry = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
    let rz = Matrix3::new(cr, -sr, 0.0, sr, cr, 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

// One Newton step toward the nearest orthonormal matrix; removes the rounding
// drift accumulated by repeated products.
fn reorthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let e = r.transpose() * r - Matrix3::identity();
    r - r * e * 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Distortion {
    pub k1: f64,
    pub k2: f64,
    pub p1: f64,
    pub p2: f64,
    pub k3: f64,
}

impl Distortion {
    pub fn new(k1: f64, k2: f64, p1: f64, p2: f64, k3: f64) -> Result<Self> {
        let d = Self { k1, k2, p1, p2, k3 };
        if !d.as_array().iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("distortion coefficients must be finite"));
        }
        Ok(d)
    }

    /// Coefficients in file order `[k1, k2, p1, p2, k3]`.
    pub fn as_array(&self) -> [f64; 5] {
        [self.k1, self.k2, self.p1, self.p2, self.k3]
    }

    pub fn from_array(a: [f64; 5]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn is_zero(&self) -> bool {
        self.as_array().iter().all(|&c| c == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraParams {
    pub id: u32,
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
    pub distortion: Distortion,
    pub image_size: (u32, u32),
}

impl CameraParams {
    pub fn new(
        id: u32,
        intrinsics: Intrinsics,
        extrinsics: Extrinsics,
        distortion: Distortion,
        image_size: (u32, u32),
    ) -> Result<Self> {
        if image_size.0 == 0 || image_size.1 == 0 {
            return Err(Error::invalid(format!("camera {id}: image size must be positive")));
        }
        Ok(Self {
            id,
            intrinsics,
            extrinsics,
            distortion,
            image_size,
        })
    }

    /// Returns the camera with `delta` added to its perturbable parameters.
    ///
    /// Rotation entries are applied as a pitch/yaw/roll increment in the
    /// camera frame; all other entries are additive.
    pub fn with_increment(&self, delta: &ParamVector) -> CameraParams {
        use param::*;
        let extrinsics = self
            .extrinsics
            .rotated(delta[PITCH], delta[YAW], delta[ROLL])
            .translated(&Vector3::new(delta[TX], delta[TY], delta[TZ]));
        let d = &self.distortion;
        let i = &self.intrinsics;
        CameraParams {
            id: self.id,
            intrinsics: Intrinsics {
                fx: i.fx + delta[FX],
                fy: i.fy + delta[FY],
                cx: i.cx + delta[CX],
                cy: i.cy + delta[CY],
            },
            extrinsics,
            distortion: Distortion {
                k1: d.k1 + delta[K1],
                k2: d.k2 + delta[K2],
                p1: d.p1 + delta[P1],
                p2: d.p2 + delta[P2],
                k3: d.k3 + delta[K3],
            },
            image_size: self.image_size,
        }
    }
}

/// Applies the Brown-Conrady distortion to normalized image coordinates.
pub fn distort(n: &Vector2<f64>, d: &Distortion) -> Vector2<f64> {
    let (x, y) = (n.x, n.y);
    let r2 = x * x + y * y;
    let radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3));
    Vector2::new(
        x * radial + 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x),
        y * radial + d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y,
    )
}

/// Jacobian of [`distort`] with respect to the normalized point.
fn distort_jacobian(n: &Vector2<f64>, d: &Distortion) -> Matrix2<f64> {
    let (x, y) = (n.x, n.y);
    let r2 = x * x + y * y;
    let radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3));
    // d(radial)/d(r²)
    let dr = d.k1 + r2 * (2.0 * d.k2 + 3.0 * d.k3 * r2);
    Matrix2::new(
        radial + 2.0 * dr * x * x + 2.0 * d.p1 * y + 6.0 * d.p2 * x,
        2.0 * dr * x * y + 2.0 * d.p1 * x + 2.0 * d.p2 * y,
        2.0 * dr * x * y + 2.0 * d.p1 * x + 2.0 * d.p2 * y,
        radial + 2.0 * dr * y * y + 6.0 * d.p1 * y + 2.0 * d.p2 * x,
    )
}

/// Inverts [`distort`] by Newton iteration on `distort(r) = target`.
pub fn undistort(target: &Vector2<f64>, d: &Distortion, tol: &CameraTolerances) -> Result<Vector2<f64>> {
    if d.is_zero() {
        return Ok(*target);
    }
    let mut r = *target;
    let mut residual = f64::INFINITY;
    for _ in 0..tol.max_undistort_iters {
        let e = distort(&r, d) - target;
        residual = e.norm();
        if residual < tol.undistort_tol {
            return Ok(r);
        }
        let j = distort_jacobian(&r, d);
        let Some(j_inv) = j.try_inverse() else {
            break;
        };
        r -= j_inv * e;
        if !r.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    let e = (distort(&r, d) - target).norm();
    if e < tol.undistort_tol {
        return Ok(r);
    }
    Err(Error::NoConvergence {
        iterations: tol.max_undistort_iters,
        residual: residual.min(e),
    })
}

fn depth_checked(c: &Vector3<f64>, cam: &CameraParams, eps: f64) -> Result<()> {
    if c.z > eps {
        Ok(())
    } else {
        Err(Error::PointBehindCamera {
            camera_id: cam.id,
            depth: c.z,
        })
    }
}

/// Projects a world point to pixel coordinates.
pub fn project(point: &Position3D, cam: &CameraParams) -> Result<Pixel2D> {
    project_with(point, cam, CameraTolerances::default().depth_epsilon)
}

pub fn project_with(point: &Position3D, cam: &CameraParams, depth_epsilon: f64) -> Result<Pixel2D> {
    let c = cam.extrinsics.to_camera(point);
    depth_checked(&c, cam, depth_epsilon)?;
    let n = Vector2::new(c.x / c.z, c.y / c.z);
    Ok(cam.intrinsics.to_pixel(&distort(&n, &cam.distortion)))
}

/// Pixel-space Jacobians of [`project`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionJacobians {
    pub d_pixel_d_x: Matrix2x3<f64>,
    pub d_pixel_d_h: SMatrix<f64, 2, { param::COUNT }>,
}

/// Projection together with its analytic Jacobians in the world point and in
/// the perturbable parameter vector.
pub fn project_with_jacobians(
    point: &Position3D,
    cam: &CameraParams,
) -> Result<(Pixel2D, ProjectionJacobians)> {
    let rx = cam.extrinsics.rotation() * point;
    let c = rx + cam.extrinsics.translation();
    depth_checked(&c, cam, CameraTolerances::default().depth_epsilon)?;
    let inv_z = 1.0 / c.z;
    let n = Vector2::new(c.x * inv_z, c.y * inv_z);
    let d = &cam.distortion;
    let g = distort(&n, d);
    let k = &cam.intrinsics;
    let pixel = k.to_pixel(&g);

    let dn_dc = Matrix2x3::new(
        inv_z,
        0.0,
        -n.x * inv_z,
        0.0,
        inv_z,
        -n.y * inv_z,
    );
    let scale = Matrix2::new(k.fx, 0.0, 0.0, k.fy);
    let dpix_dn = scale * distort_jacobian(&n, d);
    let dpix_dc = dpix_dn * dn_dc;

    let d_pixel_d_x = dpix_dc * cam.extrinsics.rotation();

    let mut d_pixel_d_h = SMatrix::<f64, 2, { param::COUNT }>::zeros();
    // Rotation increments: d(c)/d(theta_i) = e_i × (R x).
    let axes = [Vector3::x(), Vector3::y(), Vector3::z()];
    for (i, axis) in axes.iter().enumerate() {
        let dc = axis.cross(&rx);
        d_pixel_d_h.set_column(param::PITCH + i, &(dpix_dc * dc));
    }
    for i in 0..3 {
        d_pixel_d_h.set_column(param::TX + i, &dpix_dc.column(i).into_owned());
    }
    let r2 = n.norm_squared();
    let dk = |v: Vector2<f64>| scale * v;
    d_pixel_d_h.set_column(param::K1, &dk(n * r2));
    d_pixel_d_h.set_column(param::K2, &dk(n * (r2 * r2)));
    d_pixel_d_h.set_column(param::P1, &dk(Vector2::new(2.0 * n.x * n.y, r2 + 2.0 * n.y * n.y)));
    d_pixel_d_h.set_column(param::P2, &dk(Vector2::new(r2 + 2.0 * n.x * n.x, 2.0 * n.x * n.y)));
    d_pixel_d_h.set_column(param::K3, &dk(n * (r2 * r2 * r2)));
    d_pixel_d_h[(0, param::FX)] = g.x;
    d_pixel_d_h[(1, param::FY)] = g.y;
    d_pixel_d_h[(0, param::CX)] = 1.0;
    d_pixel_d_h[(1, param::CY)] = 1.0;

    Ok((
        pixel,
        ProjectionJacobians {
            d_pixel_d_x,
            d_pixel_d_h,
        },
    ))
}

pub fn jacobians(point: &Position3D, cam: &CameraParams) -> Result<ProjectionJacobians> {
    project_with_jacobians(point, cam).map(|(_, j)| j)
}

/// Whether the point lies in front of the camera and projects inside the image.
pub fn is_visible(point: &Position3D, cam: &CameraParams) -> bool {
    is_visible_with(point, cam, &CameraTolerances::default())
}

pub fn is_visible_with(point: &Position3D, cam: &CameraParams, tol: &CameraTolerances) -> bool {
    let Ok(p) = project_with(point, cam, tol.depth_epsilon) else {
        return false;
    };
    let (w, h) = (cam.image_size.0 as f64, cam.image_size.1 as f64);
    let m = tol.margin_px;
    p.x >= m && p.x < w - m && p.y >= m && p.y < h - m
}

/// Pixel to undistorted normalized coordinates.
pub fn normalize_pixel(pixel: &Pixel2D, cam: &CameraParams, tol: &CameraTolerances) -> Result<Vector2<f64>> {
    undistort(&cam.intrinsics.to_normalized(pixel), &cam.distortion, tol)
}

/// Homography mapping undistorted homogeneous pixels to world `(x, y, 1)` on
/// the plane `z = plane_height`.
pub fn plane_homography(cam: &CameraParams, plane_height: f64) -> Result<Matrix3<f64>> {
    plane_homography_with(cam, plane_height, &CameraTolerances::default())
}

pub fn plane_homography_with(
    cam: &CameraParams,
    plane_height: f64,
    tol: &CameraTolerances,
) -> Result<Matrix3<f64>> {
    let r = cam.extrinsics.rotation();
    let t = cam.extrinsics.translation();
    let mut plane_to_cam = Matrix3::zeros();
    plane_to_cam.set_column(0, &r.column(0));
    plane_to_cam.set_column(1, &r.column(1));
    plane_to_cam.set_column(2, &(r.column(2) * plane_height + t));
    let forward = cam.intrinsics.matrix() * plane_to_cam;
    let sv = forward.singular_values();
    let condition = sv.max() / sv.min();
    if !(condition.is_finite() && condition <= tol.cond_max) {
        return Err(Error::DegenerateHomography {
            camera_id: cam.id,
            condition,
        });
    }
    forward.try_inverse().ok_or(Error::DegenerateHomography {
        camera_id: cam.id,
        condition,
    })
}

/// Maps an observed (distorted) pixel to the world point on `z = plane_height`.
///
/// Fails with `PointBehindCamera` when the viewing ray meets the plane behind
/// the camera.
pub fn pixel_to_plane(
    pixel: &Pixel2D,
    cam: &CameraParams,
    plane_height: f64,
    tol: &CameraTolerances,
) -> Result<Position3D> {
    let n = normalize_pixel(pixel, cam, tol)?;
    let h = plane_homography_with(cam, plane_height, tol)?;
    let undistorted = cam.intrinsics.to_pixel(&n);
    let w = h * Vector3::new(undistorted.x, undistorted.y, 1.0);
    let world = Position3D::new(w.x / w.z, w.y / w.z, plane_height);
    let depth = cam.extrinsics.to_camera(&world).z;
    if !(depth > tol.depth_epsilon) || !world.iter().all(|v| v.is_finite()) {
        return Err(Error::PointBehindCamera {
            camera_id: cam.id,
            depth,
        });
    }
    Ok(world)
}

/// World-frame direction of the viewing ray through `pixel`.
pub fn back_project_ray(pixel: &Pixel2D, cam: &CameraParams, tol: &CameraTolerances) -> Result<Vector3<f64>> {
    let n = normalize_pixel(pixel, cam, tol)?;
    Ok(cam.extrinsics.rotation().transpose() * Vector3::new(n.x, n.y, 1.0))
}
