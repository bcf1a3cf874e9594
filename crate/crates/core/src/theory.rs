//! Numerical probes of how calibration error reaches the residual at the true
//! position.
//!
//! For a calibration error `ε Δh` the nominal residual at the true position is
//! `f(x*, h* + εΔh) − f(x*, h*)`, first order in `ε`. The anchor-adjusted
//! residual subtracts `Σ_j w_j (f(a_j, h* + εΔh) − f(a_j, h*))` with affine
//! weights reproducing `x*`; the part of the first-order term that is affine
//! in the anchor position cancels, the curvature part does not.

use nalgebra::DVector;

use crate::camera::{project, CameraParams, ParamVector, Position3D};
use crate::error::{Error, Result};
use crate::weights::{solve_weights, Anchor};

/// One camera's view of the target plus its exactly observed anchors.
#[derive(Debug, Clone)]
pub struct CancellationCase<'a> {
    pub camera: &'a CameraParams,
    pub anchors: &'a [Anchor],
    /// Unit-scale perturbation direction in parameter space.
    pub direction: ParamVector,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilePoint {
    pub epsilon: f64,
    pub nominal: f64,
    pub anchor: f64,
}

/// Residual norms at `x_star` across perturbation scales, stacked over all
/// cases. Anchor pixels are taken as exact projections under the true
/// cameras and the weights are solved at `x_star`.
pub fn cancellation_profile(
    x_star: &Position3D,
    cases: &[CancellationCase<'_>],
    epsilons: &[f64],
    lambda: f64,
) -> Result<Vec<ProfilePoint>> {
    let weights = cases
        .iter()
        .map(|c| solve_weights(c.anchors, x_star, lambda))
        .collect::<Result<Vec<_>>>()?;
    epsilons
        .iter()
        .map(|&eps| {
            let mut nominal = Vec::with_capacity(2 * cases.len());
            let mut anchor = Vec::with_capacity(2 * cases.len());
            for (c, w) in cases.iter().zip(&weights) {
                let perturbed = c.camera.with_increment(&(c.direction * eps));
                let r = project(x_star, &perturbed)? - project(x_star, c.camera)?;
                let mut corr = nalgebra::Vector2::zeros();
                for (a, (_, wj)) in c.anchors.iter().zip(&w.weights) {
                    corr += (project(&a.world, &perturbed)? - project(&a.world, c.camera)?) * *wj;
                }
                nominal.extend_from_slice(r.as_slice());
                anchor.extend_from_slice((r - corr).as_slice());
            }
            Ok(ProfilePoint {
                epsilon: eps,
                nominal: DVector::from_vec(nominal).norm(),
                anchor: DVector::from_vec(anchor).norm(),
            })
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::LengthMismatch(format!("{} x values, {} y values", xs.len(), ys.len())));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("log-log fit needs positive values"));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}
