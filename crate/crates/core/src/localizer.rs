//! Per-frame and windowed position solvers.
//!
//! Both the nominal and the anchor-adjusted objectives are sums of squared
//! 2-vectors `f(x, h_k) − target_k`, where the anchor-adjusted target adds the
//! precomputed correction `Σ_j w_kj (f(a_kj, h_k) − b_kj)` to the observed
//! pixel. Windows of consecutive frames add `ρ Σ ‖x_t − x_{t−1}‖²`, which makes
//! the Gauss-Newton normal matrix block tridiagonal with 3×3 blocks.

use std::collections::BTreeMap;

use nalgebra::{DVector, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{project, project_with_jacobians, CameraParams, Pixel2D, Position3D};
use crate::error::{Error, Result};
use crate::observation::{CameraSet, FrameObservations};
use crate::weights::{solve_weights, AnchorSet, AnchorWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mode {
    Nominal,
    Anchor,
}

/// Objective selector. Anchor mode carries the anchors and the ridge penalty
/// used to derive per-frame weights from the initial estimate.
#[derive(Debug, Clone, Copy)]
pub enum Method<'a> {
    Nominal,
    Anchor { anchors: &'a AnchorSet, lambda: f64 },
}

impl Method<'_> {
    pub fn mode(&self) -> Mode {
        match self {
            Method::Nominal => Mode::Nominal,
            Method::Anchor { .. } => Mode::Anchor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Meters.
    pub step_tol: f64,
    pub grad_tol: f64,
    pub damping_init: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    /// Height pinned when only one camera sees the target.
    pub fixed_height: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            step_tol: 1e-6,
            grad_tol: 1e-8,
            damping_init: 1e-3,
            damping_up: 10.0,
            damping_down: 0.5,
            fixed_height: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iters > 0
            && self.step_tol > 0.0
            && self.grad_tol > 0.0
            && self.damping_init >= 0.0
            && self.damping_up > 1.0
            && self.damping_down > 0.0
            && self.damping_down < 1.0
            && self.fixed_height.map_or(true, f64::is_finite);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid solver configuration {self:?}")))
        }
    }

    pub fn with_fixed_height(mut self, height: f64) -> Self {
        self.fixed_height = Some(height);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingConfig {
    pub batch_size: usize,
    /// Pixels² per m².
    pub rho: f64,
}

/// Smoothness weight used on the real-data windows.
pub const DEFAULT_RHO: f64 = 60.0;

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            batch_size: 1,
            rho: DEFAULT_RHO,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size >= 1 && self.rho >= 0.0 && self.rho.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid smoothing configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    pub frame_index: u64,
    pub target_id: u32,
    pub position: Position3D,
    pub converged: bool,
    pub iterations: usize,
    /// Sum of squared residuals in pixels², smoothness term excluded.
    pub final_objective: f64,
    pub per_camera_residuals: Vec<(u32, Vector2<f64>)>,
    pub mode: Mode,
    /// Whether the height was pinned (single visible camera).
    pub height_fixed: bool,
    /// Window objective (smoothness included) at the start and after every
    /// accepted step.
    pub objective_history: Vec<f64>,
}

/// Stacked `f(x, h_k) − ȳ_k` over the visible cameras, in entry order.
pub fn residual_nominal(x: &Position3D, obs: &FrameObservations, cams: &CameraSet) -> Result<DVector<f64>> {
    if obs.visible_count() == 0 {
        return Err(obs.no_visible_error());
    }
    let mut out = Vec::with_capacity(2 * obs.visible_count());
    for (camera_id, pixel) in obs.visible() {
        let r = project(x, cams.get(camera_id)?)? - pixel;
        out.extend_from_slice(r.as_slice());
    }
    Ok(DVector::from_vec(out))
}

/// Solves the anchor weights of every visible camera at `x_bar`.
pub fn frame_weights(
    obs: &FrameObservations,
    anchors: &AnchorSet,
    x_bar: &Position3D,
    lambda: f64,
) -> Result<BTreeMap<u32, AnchorWeights>> {
    obs.visible()
        .map(|(camera_id, _)| {
            let list = anchors.for_camera(camera_id);
            if list.is_empty() {
                return Err(Error::MissingWeights { camera_id });
            }
            solve_weights(list, x_bar, lambda).map(|w| (camera_id, w))
        })
        .collect()
}

/// Anchor correction `Σ_j w_j (f(a_j, h) − b_j)` for one camera.
pub fn anchor_correction(cam: &CameraParams, anchors: &AnchorSet, weights: &AnchorWeights) -> Result<Vector2<f64>> {
    let list = anchors.for_camera(cam.id);
    let mut sum = Vector2::zeros();
    for (camera_anchor, (anchor_id, w)) in list.iter().zip(&weights.weights) {
        if camera_anchor.anchor_id != *anchor_id {
            return Err(Error::invalid(format!(
                "weights for camera {} do not match its anchor list",
                cam.id
            )));
        }
        sum += (project(&camera_anchor.world, cam)? - camera_anchor.observed_pixel) * *w;
    }
    if list.len() != weights.weights.len() {
        return Err(Error::invalid(format!(
            "camera {} has {} anchors but {} weights",
            cam.id,
            list.len(),
            weights.weights.len()
        )));
    }
    Ok(sum)
}

/// Stacked anchor-adjusted residuals over the visible cameras, in entry order.
pub fn residual_anchor(
    x: &Position3D,
    obs: &FrameObservations,
    cams: &CameraSet,
    anchors: &AnchorSet,
    weights: &BTreeMap<u32, AnchorWeights>,
) -> Result<DVector<f64>> {
    let problem = FrameProblem::build(obs, cams, Some((anchors, weights)), Some(x.z))?;
    let res = problem.residuals(x)?;
    Ok(DVector::from_iterator(
        2 * res.len(),
        res.iter().flat_map(|(_, r)| [r.x, r.y]),
    ))
}

struct Term<'a> {
    cam: &'a CameraParams,
    target: Pixel2D,
}

/// One frame's residual terms with corrections already folded into targets.
pub(crate) struct FrameProblem<'a> {
    frame_index: u64,
    target_id: u32,
    terms: Vec<Term<'a>>,
    pinned_height: Option<f64>,
}

struct Linearization {
    cost: f64,
    jtj: Matrix3<f64>,
    jtr: Vector3<f64>,
}

impl<'a> FrameProblem<'a> {
    fn build(
        obs: &FrameObservations,
        cams: &'a CameraSet,
        anchors: Option<(&AnchorSet, &BTreeMap<u32, AnchorWeights>)>,
        fixed_height: Option<f64>,
    ) -> Result<Self> {
        let mut terms = Vec::with_capacity(obs.entries.len());
        for (camera_id, pixel) in obs.visible() {
            let cam = cams.get(camera_id)?;
            let correction = match anchors {
                None => Vector2::zeros(),
                Some((set, weights)) => {
                    let w = weights.get(&camera_id).ok_or(Error::MissingWeights { camera_id })?;
                    anchor_correction(cam, set, w)?
                }
            };
            terms.push(Term {
                cam,
                target: pixel + correction,
            });
        }
        if terms.is_empty() {
            return Err(obs.no_visible_error());
        }
        let pinned_height = if terms.len() == 1 {
            Some(fixed_height.ok_or_else(|| {
                Error::invalid(format!(
                    "frame {} target {}: a single visible camera requires a fixed height",
                    obs.frame_index, obs.target_id
                ))
            })?)
        } else {
            None
        };
        Ok(Self {
            frame_index: obs.frame_index,
            target_id: obs.target_id,
            terms,
            pinned_height,
        })
    }

    fn for_method(
        obs: &FrameObservations,
        cams: &'a CameraSet,
        method: &Method<'_>,
        x_bar: &Position3D,
        fixed_height: Option<f64>,
    ) -> Result<Self> {
        match method {
            Method::Nominal => Self::build(obs, cams, None, fixed_height),
            Method::Anchor { anchors, lambda } => {
                let weights = frame_weights(obs, anchors, x_bar, *lambda)?;
                Self::build(obs, cams, Some((anchors, &weights)), fixed_height)
            }
        }
    }

    fn residuals(&self, x: &Position3D) -> Result<Vec<(u32, Vector2<f64>)>> {
        self.terms
            .iter()
            .map(|t| Ok((t.cam.id, project(x, t.cam)? - t.target)))
            .collect()
    }

    fn cost(&self, x: &Position3D) -> Result<f64> {
        let mut cost = 0.0;
        for t in &self.terms {
            cost += (project(x, t.cam)? - t.target).norm_squared();
        }
        Ok(cost)
    }

    fn linearize(&self, x: &Position3D) -> Result<Linearization> {
        let mut lin = Linearization {
            cost: 0.0,
            jtj: Matrix3::zeros(),
            jtr: Vector3::zeros(),
        };
        for t in &self.terms {
            let (pixel, jac) = project_with_jacobians(x, t.cam)?;
            let r = pixel - t.target;
            let j = jac.d_pixel_d_x;
            lin.cost += r.norm_squared();
            lin.jtj += j.transpose() * j;
            lin.jtr += j.transpose() * r;
        }
        Ok(lin)
    }

    fn free_mask(&self) -> Vector3<f64> {
        if self.pinned_height.is_some() {
            Vector3::new(1.0, 1.0, 0.0)
        } else {
            Vector3::new(1.0, 1.0, 1.0)
        }
    }
}

/// One undamped Gauss-Newton step for a single frame from `x`.
pub fn gauss_newton_step(
    x: &Position3D,
    obs: &FrameObservations,
    cams: &CameraSet,
    fixed_height: Option<f64>,
) -> Result<Position3D> {
    let problem = FrameProblem::build(obs, cams, None, fixed_height)?;
    let mut x0 = *x;
    if let Some(h) = problem.pinned_height {
        x0.z = h;
    }
    let lin = problem.linearize(&x0)?;
    let mask = problem.free_mask();
    let (h, g) = masked_system(&lin.jtj, &lin.jtr, &mask);
    let step = h
        .lu()
        .solve(&(-g))
        .ok_or_else(|| Error::invalid("singular Gauss-Newton system"))?;
    Ok(x0 + step)
}

fn masked_system(h: &Matrix3<f64>, g: &Vector3<f64>, mask: &Vector3<f64>) -> (Matrix3<f64>, Vector3<f64>) {
    let mut h = h.component_mul(&(mask * mask.transpose()));
    for i in 0..3 {
        if mask[i] == 0.0 {
            h[(i, i)] = 1.0;
        }
    }
    (h, g.component_mul(mask))
}

/// Solves one frame by damped Gauss-Newton starting from `init`.
///
/// In anchor mode the weights are solved once at `init` and held fixed.
pub fn solve_frame(
    obs: &FrameObservations,
    cams: &CameraSet,
    method: Method<'_>,
    init: &Position3D,
    solver: &SolverConfig,
) -> Result<LocalizationResult> {
    solver.validate()?;
    let problem = FrameProblem::for_method(obs, cams, &method, init, solver.fixed_height)?;
    let mut results = damped_gauss_newton(&[problem], &[*init], 0.0, solver, method.mode())?;
    Ok(results.remove(0))
}

/// Jointly solves a window of consecutive frames of one target with the
/// smoothness penalty `ρ Σ ‖x_t − x_{t−1}‖²`.
///
/// `inits[t]` is both the starting point and, in anchor mode, the reference
/// position for frame `t`'s weights.
pub fn solve_batch(
    frames: &[FrameObservations],
    inits: &[Position3D],
    cams: &CameraSet,
    method: Method<'_>,
    rho: f64,
    solver: &SolverConfig,
) -> Result<Vec<LocalizationResult>> {
    solver.validate()?;
    if frames.len() != inits.len() {
        return Err(Error::LengthMismatch(format!(
            "{} frames but {} initial estimates",
            frames.len(),
            inits.len()
        )));
    }
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::invalid(format!("rho must be finite and >= 0, got {rho}")));
    }
    if let Some(first) = frames.first() {
        if frames.iter().any(|f| f.target_id != first.target_id) {
            return Err(Error::invalid("a batch window must hold a single target"));
        }
    }
    let problems = frames
        .iter()
        .zip(inits)
        .map(|(obs, init)| FrameProblem::for_method(obs, cams, &method, init, solver.fixed_height))
        .collect::<Result<Vec<_>>>()?;
    if rho == 0.0 {
        // The window objective separates; solving frames one by one keeps
        // each frame's damping and stopping rule independent of the others.
        let mut out = Vec::with_capacity(problems.len());
        for (p, init) in problems.into_iter().zip(inits) {
            out.extend(damped_gauss_newton(&[p], &[*init], 0.0, solver, method.mode())?);
        }
        return Ok(out);
    }
    damped_gauss_newton(&problems, inits, rho, solver, method.mode())
}

/// Splits a single target's frames into consecutive non-overlapping windows of
/// at most `batch_size` frames, also breaking at gaps in the frame index, and
/// solves each window. Results come back in input order.
pub fn solve_trajectory(
    frames: &[FrameObservations],
    inits: &[Position3D],
    cams: &CameraSet,
    method: Method<'_>,
    smoothing: &SmoothingConfig,
    solver: &SolverConfig,
) -> Result<Vec<LocalizationResult>> {
    smoothing.validate()?;
    if frames.len() != inits.len() {
        return Err(Error::LengthMismatch(format!(
            "{} frames but {} initial estimates",
            frames.len(),
            inits.len()
        )));
    }
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
        out.extend(solve_batch(
            &frames[start..end],
            &inits[start..end],
            cams,
            method,
            smoothing.rho,
            solver,
        )?);
        start = end;
    }
    Ok(out)
}

struct WindowState {
    positions: Vec<Position3D>,
    data_costs: Vec<f64>,
    total: f64,
}

fn window_cost(problems: &[FrameProblem<'_>], xs: &[Position3D], rho: f64) -> Result<WindowState> {
    let data_costs = problems
        .iter()
        .zip(xs)
        .map(|(p, x)| p.cost(x))
        .collect::<Result<Vec<_>>>()?;
    let smooth: f64 = xs.windows(2).map(|w| (w[1] - w[0]).norm_squared()).sum();
    Ok(WindowState {
        positions: xs.to_vec(),
        total: data_costs.iter().sum::<f64>() + rho * smooth,
        data_costs,
    })
}

const MAX_DAMPING: f64 = 1e16;

fn damped_gauss_newton(
    problems: &[FrameProblem<'_>],
    inits: &[Position3D],
    rho: f64,
    solver: &SolverConfig,
    mode: Mode,
) -> Result<Vec<LocalizationResult>> {
    let n = problems.len();
    let masks: Vec<Vector3<f64>> = problems.iter().map(FrameProblem::free_mask).collect();
    let start: Vec<Position3D> = problems
        .iter()
        .zip(inits)
        .map(|(p, x)| {
            let mut x = *x;
            if let Some(h) = p.pinned_height {
                x.z = h;
            }
            x
        })
        .collect();

    let mut state = window_cost(problems, &start, rho)?;
    let mut mu = solver.damping_init;
    let mut iterations = 0;
    let mut converged = false;
    let mut system = assemble(problems, &state.positions, &masks, rho)?;
    let mut history = vec![state.total];

    while iterations < solver.max_iters {
        iterations += 1;
        if system.grad_norm < solver.grad_tol {
            converged = true;
            break;
        }
        let Some(step) = solve_block_tridiagonal(&system, &masks, rho, mu) else {
            mu = (mu * solver.damping_up).max(f64::MIN_POSITIVE).min(MAX_DAMPING);
            continue;
        };
        let step_norm = step.iter().map(|s| s.norm()).fold(0.0, f64::max);
        let trial: Vec<Position3D> = state.positions.iter().zip(&step).map(|(x, s)| x + s).collect();
        match window_cost(problems, &trial, rho) {
            Ok(next) if next.total <= state.total => {
                state = next;
                history.push(state.total);
                mu *= solver.damping_down;
                if step_norm < solver.step_tol {
                    converged = true;
                    break;
                }
                system = assemble(problems, &state.positions, &masks, rho)?;
            }
            _ => {
                // Rejected: a point fell behind a camera or the cost rose.
                if step_norm < solver.step_tol {
                    converged = true;
                    break;
                }
                mu = (mu * solver.damping_up).max(1e-12).min(MAX_DAMPING);
            }
        }
    }

    problems
        .iter()
        .enumerate()
        .map(|(t, p)| {
            let x = state.positions[t];
            Ok(LocalizationResult {
                frame_index: p.frame_index,
                target_id: p.target_id,
                position: x,
                converged,
                iterations,
                final_objective: state.data_costs[t],
                per_camera_residuals: p.residuals(&x)?,
                mode,
                height_fixed: p.pinned_height.is_some(),
                objective_history: history.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(|r| {
            debug_assert_eq!(r.len(), n);
            r
        })
}

struct NormalSystem {
    diag: Vec<Matrix3<f64>>,
    grad: Vec<Vector3<f64>>,
    grad_norm: f64,
}

/// Gauss-Newton normal blocks of half the window objective.
fn assemble(
    problems: &[FrameProblem<'_>],
    xs: &[Position3D],
    masks: &[Vector3<f64>],
    rho: f64,
) -> Result<NormalSystem> {
    let n = problems.len();
    let mut diag = Vec::with_capacity(n);
    let mut grad = Vec::with_capacity(n);
    for (t, p) in problems.iter().enumerate() {
        let lin = p.linearize(&xs[t])?;
        let mut h = lin.jtj;
        let mut g = lin.jtr;
        if t > 0 {
            h += Matrix3::identity() * rho;
            g += (xs[t] - xs[t - 1]) * rho;
        }
        if t + 1 < n {
            h += Matrix3::identity() * rho;
            g += (xs[t] - xs[t + 1]) * rho;
        }
        let (h, g) = masked_system(&h, &g, &masks[t]);
        diag.push(h);
        grad.push(g);
    }
    let grad_norm = grad.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt();
    Ok(NormalSystem {
        diag,
        grad,
        grad_norm,
    })
}

/// Block Thomas elimination of `(H + μI) Δ = −g` where `H` has the diagonal
/// blocks in `system` and off-diagonal blocks `−ρ M_t M_{t+1}`.
fn solve_block_tridiagonal(
    system: &NormalSystem,
    masks: &[Vector3<f64>],
    rho: f64,
    mu: f64,
) -> Option<Vec<Vector3<f64>>> {
    let n = system.diag.len();
    let coupling = |t: usize| -> Matrix3<f64> {
        // Block (t, t+1).
        Matrix3::from_diagonal(&masks[t].component_mul(&masks[t + 1])) * (-rho)
    };
    let mut d_inv: Vec<Matrix3<f64>> = Vec::with_capacity(n);
    let mut rhs: Vec<Vector3<f64>> = Vec::with_capacity(n);
    for t in 0..n {
        let mut d = system.diag[t] + Matrix3::from_diagonal(&masks[t]) * mu;
        let mut b = -system.grad[t];
        if t > 0 {
            let lower = coupling(t - 1).transpose();
            let upper_prev = coupling(t - 1);
            let m = lower * d_inv[t - 1];
            d -= m * upper_prev;
            b -= m * rhs[t - 1];
        }
        d_inv.push(d.try_inverse()?);
        rhs.push(b);
    }
    let mut step = vec![Vector3::zeros(); n];
    for t in (0..n).rev() {
        let mut b = rhs[t];
        if t + 1 < n {
            b -= coupling(t) * step[t + 1];
        }
        step[t] = d_inv[t] * b;
        if !step[t].iter().all(|v| v.is_finite()) {
            return None;
        }
    }
    Some(step)
}
