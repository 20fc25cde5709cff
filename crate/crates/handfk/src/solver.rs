//! Fits pose and scale parameters to target joint positions.
//!
//! The objective is the forward-kinematics loss `½‖forward(Θ,S) − target‖²`
//! over all 48 joint coordinates. The primary algorithm is Gauss-Newton with
//! Levenberg-Marquardt damping on the stacked 48×(21+K) Jacobian; a plain
//! gradient-descent mode with momentum is kept alongside it. Box limits on
//! every parameter are enforced by projection after each step, so candidate
//! evaluations never leave the feasible region.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::fk::{self, FkError};
use crate::skeleton::{JointSet, KinematicTree, PoseVector, ScaleMode, ScaleVector, DOF_COUNT};

/// Damping factor above which a Levenberg-Marquardt step is hopeless: the
/// update is numerically zero long before this, so growing past it means no
/// descent direction exists at the working precision.
const LAMBDA_MAX: f64 = 1e15;
/// Damping never shrinks below this; keeps the normal matrix positive
/// definite even when the Jacobian loses rank at a fully folded pose.
const LAMBDA_MIN: f64 = 1e-12;
/// Extra Gauss-Newton iterations granted after the cost threshold is hit,
/// so the optimality certificate can be reached before stopping. Near a
/// zero-residual optimum each step roughly squares the gradient norm, so a
/// handful always suffices.
const POLISH_ITERS: usize = 5;
/// A point is converged when the projected gradient satisfies this bound.
const CERTIFICATE_SCALE: f64 = 1e-6;
/// Restart poses tried when a frame's fit lands far above the rest of its
/// set; drawn from a fixed stream so the whole procedure stays
/// reproducible.
const RESCUE_RESTARTS: usize = 6;
const RESCUE_SEED: u64 = 0x5CA1E5;
/// A frame whose cost exceeds this multiple of the set's median is treated
/// as stuck in a pose local minimum and re-fit from restart poses.
const RESCUE_FACTOR: f64 = 3.0;
/// Stream separator for the restart draws of [`fit`] and [`fit_pose_only`],
/// so a master seed never replays the rescue stream of
/// [`fit_scales_over_set`].
const RESTART_STREAM: u64 = 0xF17_5EED;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Fk(#[from] FkError),
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
    #[error("cost became non-finite at iteration {iteration}")]
    NonFiniteCost { iteration: usize },
    #[error("cannot fit scales over an empty target set")]
    EmptyTargetSet,
}

/// Optimization algorithm for [`fit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Algorithm {
    /// Levenberg-Marquardt damped Gauss-Newton; deterministic and fast on
    /// this objective. The default.
    GaussNewton,
    /// First-order descent with momentum on the same gradients.
    Descent,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::GaussNewton => "gauss_newton",
            Algorithm::Descent => "descent",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "gauss_newton" => Some(Algorithm::GaussNewton),
            "descent" => Some(Algorithm::Descent),
            _ => None,
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Configuration for [`fit`] and [`fit_scales_over_set`].
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub mode: ScaleMode,
    pub algorithm: Algorithm,
    /// Iteration cap: accepted steps for Gauss-Newton, update steps for
    /// descent, outer rounds for [`fit_scales_over_set`].
    pub max_iters: usize,
    /// Initial Levenberg-Marquardt damping; ×10 on a rejected step, ×0.1 on
    /// an accepted one.
    pub damping_init: f64,
    /// Cost (mm²) below which the fit stops after a short polishing phase.
    pub tol_cost: f64,
    /// Parameter-space step norm below which the fit is considered stalled.
    pub tol_step: f64,
    /// Learning rate for [`Algorithm::Descent`].
    pub descent_lr: f64,
    /// Momentum for [`Algorithm::Descent`], in `[0, 1)`.
    pub descent_momentum: f64,
    /// Extra attempts from seeded random in-bounds starts when the best
    /// final cost stays above `tol_cost`; the lowest-cost attempt wins.
    /// Zero keeps the fit strictly single-start.
    pub restarts: usize,
    /// Master seed for the restart and rescue draws.
    pub seed: u64,
}

impl FitConfig {
    pub fn new(mode: ScaleMode) -> Self {
        Self {
            mode,
            algorithm: Algorithm::GaussNewton,
            max_iters: 200,
            damping_init: 1e-3,
            tol_cost: 1e-10,
            tol_step: 1e-8,
            descent_lr: 1e-3,
            descent_momentum: 0.9,
            restarts: 8,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<(), SolverError> {
        let positives = [
            ("damping_init", self.damping_init),
            ("tol_cost", self.tol_cost),
            ("tol_step", self.tol_step),
            ("descent_lr", self.descent_lr),
        ];
        for (name, value) in positives {
            if !(value.is_finite() && value > 0.0) {
                return Err(SolverError::InvalidConfig(format!(
                    "{name} must be positive and finite, got {value}"
                )));
            }
        }
        if self.max_iters == 0 {
            return Err(SolverError::InvalidConfig(
                "max_iters must be positive".into(),
            ));
        }
        if !(self.descent_momentum.is_finite()
            && (0.0..1.0).contains(&self.descent_momentum))
        {
            return Err(SolverError::InvalidConfig(format!(
                "descent_momentum must lie in [0, 1), got {}",
                self.descent_momentum
            )));
        }
        Ok(())
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        Self::new(ScaleMode::Five)
    }
}

/// Outcome of a fit.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub theta_hat: PoseVector,
    pub s_hat: ScaleVector,
    /// `½‖forward(theta_hat, s_hat) − target‖²` in mm².
    pub final_cost: f64,
    /// Accepted Gauss-Newton steps, or descent updates performed.
    pub iterations: usize,
    /// True only when the projected gradient at the reported point satisfies
    /// `‖pg‖ ≤ 1e-6 × (1 + final_cost)`; hitting an iteration or cost cap
    /// alone never sets this.
    pub converged: bool,
    /// Cost after the initial point and after every accepted/performed step.
    pub cost_trace: Vec<f64>,
}

/// Which block of the stacked parameter vector is free to move.
#[derive(Clone, Copy, PartialEq)]
enum FreeParams {
    PoseAndScale,
    PoseOnly,
}

/// Stacked box bounds for the free parameters: all 21 DoF limits, followed
/// by K copies of the scale bounds when scales are free.
fn stacked_bounds(
    tree: &KinematicTree,
    mode: ScaleMode,
    free: FreeParams,
) -> (DVector<f64>, DVector<f64>) {
    let k = scale_param_count(mode, free);
    let n = DOF_COUNT + k;
    let mut lo = DVector::zeros(n);
    let mut hi = DVector::zeros(n);
    for (d, dof) in tree.dofs().iter().enumerate() {
        lo[d] = dof.lo;
        hi[d] = dof.hi;
    }
    let bounds = tree.scale_bounds();
    for i in 0..k {
        lo[DOF_COUNT + i] = bounds.lo;
        hi[DOF_COUNT + i] = bounds.hi;
    }
    (lo, hi)
}

fn scale_param_count(mode: ScaleMode, free: FreeParams) -> usize {
    match free {
        FreeParams::PoseAndScale => mode.param_count(),
        FreeParams::PoseOnly => 0,
    }
}

fn pack(theta: &PoseVector, s: &ScaleVector, free: FreeParams) -> DVector<f64> {
    let k = scale_param_count(s.mode(), free);
    DVector::from_fn(DOF_COUNT + k, |i, _| {
        if i < DOF_COUNT {
            theta.0[i]
        } else {
            s.values()[i - DOF_COUNT]
        }
    })
}

fn unpack(x: &DVector<f64>, s_template: &ScaleVector, free: FreeParams) -> (PoseVector, ScaleVector) {
    let mut theta = PoseVector::zeros();
    theta.0.copy_from_slice(&x.as_slice()[..DOF_COUNT]);
    let s = match free {
        FreeParams::PoseAndScale => ScaleVector::new(
            s_template.mode(),
            x.as_slice()[DOF_COUNT..].to_vec(),
        )
        .expect("packed scale block has the mode's length"),
        FreeParams::PoseOnly => s_template.clone(),
    };
    (theta, s)
}

fn project(x: &mut DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Stacked `[J_pose | J_scale]ᵀ r` gradient over the free parameters.
fn stacked_gradient(
    jp: &fk::PoseJacobian,
    js: &fk::ScaleJacobian,
    r: &DVector<f64>,
    free: FreeParams,
) -> DVector<f64> {
    let gt = jp.matrix().transpose() * r;
    match free {
        FreeParams::PoseOnly => gt,
        FreeParams::PoseAndScale => {
            let gs = js.matrix().transpose() * r;
            let mut g = DVector::zeros(gt.len() + gs.len());
            g.rows_mut(0, gt.len()).copy_from(&gt);
            g.rows_mut(gt.len(), gs.len()).copy_from(&gs);
            g
        }
    }
}

fn stacked_jacobian(
    jp: &fk::PoseJacobian,
    js: &fk::ScaleJacobian,
    free: FreeParams,
) -> DMatrix<f64> {
    match free {
        FreeParams::PoseOnly => jp.matrix().clone(),
        FreeParams::PoseAndScale => {
            let rows = jp.matrix().nrows();
            let k = js.matrix().ncols();
            let mut j = DMatrix::zeros(rows, DOF_COUNT + k);
            j.view_mut((0, 0), (rows, DOF_COUNT)).copy_from(jp.matrix());
            j.view_mut((0, DOF_COUNT), (rows, k)).copy_from(js.matrix());
            j
        }
    }
}

/// Norm of the gradient with components pointing out of the feasible box
/// zeroed; vanishes exactly at a constrained stationary point.
fn projected_gradient_norm(
    g: &DVector<f64>,
    x: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
) -> f64 {
    let mut sum = 0.0;
    for i in 0..g.len() {
        let c = if x[i] <= lo[i] {
            g[i].min(0.0)
        } else if x[i] >= hi[i] {
            g[i].max(0.0)
        } else {
            g[i]
        };
        sum += c * c;
    }
    sum.sqrt()
}

fn certified(pg_norm: f64, cost: f64) -> bool {
    pg_norm <= CERTIFICATE_SCALE * (1.0 + cost)
}

fn cost_at(
    theta: &PoseVector,
    s: &ScaleVector,
    tree: &KinematicTree,
    target: &JointSet,
) -> Result<f64, SolverError> {
    let result = fk::forward(theta, s, tree)?;
    Ok(0.5 * fk::residual(result.joints(), target).norm_squared())
}

fn run_gauss_newton(
    target: &JointSet,
    tree: &KinematicTree,
    cfg: &FitConfig,
    theta0: PoseVector,
    s0: ScaleVector,
    free: FreeParams,
) -> Result<FitReport, SolverError> {
    let (lo, hi) = stacked_bounds(tree, s0.mode(), free);
    let mut x = pack(&theta0, &s0, free);
    project(&mut x, &lo, &hi);
    let (mut theta, mut s) = unpack(&x, &s0, free);

    let mut cost = cost_at(&theta, &s, tree, target)?;
    if !cost.is_finite() {
        return Err(SolverError::NonFiniteCost { iteration: 0 });
    }
    let mut trace = vec![cost];
    let mut lambda = cfg.damping_init;
    let mut accepted = 0usize;
    let mut converged = false;
    let mut stalled = false;
    let mut polish: Option<usize> = None;

    loop {
        let (result, jp, js) = fk::forward_with_jacobians(&theta, &s, tree)?;
        let r = fk::residual(result.joints(), target);
        let g = stacked_gradient(&jp, &js, &r, free);
        if certified(projected_gradient_norm(&g, &x, &lo, &hi), cost) {
            converged = true;
            break;
        }
        if stalled || accepted >= cfg.max_iters {
            break;
        }
        if cost <= cfg.tol_cost {
            match polish {
                None => polish = Some(POLISH_ITERS),
                Some(0) => break,
                Some(left) => polish = Some(left - 1),
            }
        }

        let jac = stacked_jacobian(&jp, &js, free);
        let jtj = jac.transpose() * &jac;
        let neg_g = -&g;
        let mut moved = false;
        while lambda <= LAMBDA_MAX {
            let mut normal = jtj.clone();
            for i in 0..normal.nrows() {
                normal[(i, i)] += lambda;
            }
            let Some(chol) = Cholesky::new(normal) else {
                lambda *= 10.0;
                continue;
            };
            let mut candidate = &x + chol.solve(&neg_g);
            project(&mut candidate, &lo, &hi);
            let (ct, cs) = unpack(&candidate, &s, free);
            let new_cost = cost_at(&ct, &cs, tree, target)?;
            if !new_cost.is_finite() {
                return Err(SolverError::NonFiniteCost {
                    iteration: accepted + 1,
                });
            }
            if new_cost <= cost {
                let step_norm = (&candidate - &x).norm();
                x = candidate;
                theta = ct;
                s = cs;
                cost = new_cost;
                accepted += 1;
                trace.push(cost);
                lambda = (lambda * 0.1).max(LAMBDA_MIN);
                if step_norm < cfg.tol_step {
                    stalled = true;
                }
                moved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !moved {
            // Damping exploded: no step decreases the cost at this precision.
            break;
        }
    }

    Ok(FitReport {
        theta_hat: theta,
        s_hat: s,
        final_cost: cost,
        iterations: accepted,
        converged,
        cost_trace: trace,
    })
}

fn run_descent(
    target: &JointSet,
    tree: &KinematicTree,
    cfg: &FitConfig,
    theta0: PoseVector,
    s0: ScaleVector,
    free: FreeParams,
) -> Result<FitReport, SolverError> {
    let (lo, hi) = stacked_bounds(tree, s0.mode(), free);
    let mut x = pack(&theta0, &s0, free);
    project(&mut x, &lo, &hi);
    let (mut theta, mut s) = unpack(&x, &s0, free);

    let mut cost = cost_at(&theta, &s, tree, target)?;
    if !cost.is_finite() {
        return Err(SolverError::NonFiniteCost { iteration: 0 });
    }
    let mut trace = vec![cost];
    // Descent with momentum is not monotone, so the best visited point is
    // tracked and reported unless a certified point is reached.
    let mut best = (theta.clone(), s.clone(), cost);
    let mut velocity = DVector::zeros(x.len());
    let mut iterations = 0usize;
    let mut converged = false;

    for iter in 1..=cfg.max_iters {
        let (result, jp, js) = fk::forward_with_jacobians(&theta, &s, tree)?;
        let r = fk::residual(result.joints(), target);
        let g = stacked_gradient(&jp, &js, &r, free);
        if certified(projected_gradient_norm(&g, &x, &lo, &hi), cost) {
            converged = true;
            best = (theta.clone(), s.clone(), cost);
            break;
        }
        velocity = cfg.descent_momentum * &velocity - cfg.descent_lr * &g;
        let mut next = &x + &velocity;
        project(&mut next, &lo, &hi);
        let step_norm = (&next - &x).norm();
        x = next;
        let up = unpack(&x, &s, free);
        theta = up.0;
        s = up.1;
        cost = cost_at(&theta, &s, tree, target)?;
        if !cost.is_finite() {
            return Err(SolverError::NonFiniteCost { iteration: iter });
        }
        trace.push(cost);
        iterations = iter;
        if cost < best.2 {
            best = (theta.clone(), s.clone(), cost);
        }
        if step_norm < cfg.tol_step {
            break;
        }
    }

    Ok(FitReport {
        theta_hat: best.0,
        s_hat: best.1,
        final_cost: best.2,
        iterations,
        converged,
        cost_trace: trace,
    })
}

/// Uniform in-bounds pose for a restart attempt.
fn random_pose(rng: &mut ChaCha8Rng, tree: &KinematicTree) -> PoseVector {
    let mut theta = PoseVector::zeros();
    for (d, dof) in tree.dofs().iter().enumerate() {
        theta.0[d] = rng.gen_range(dof.lo..=dof.hi);
    }
    theta
}

/// Runs the configured algorithm from `init`, then from up to
/// `cfg.restarts` seeded random starts while the best final cost stays
/// above `cfg.tol_cost`, and returns the lowest-cost report. Frozen scales
/// stay frozen across attempts; the whole cascade is deterministic in
/// `cfg.seed`.
fn run_with_restarts(
    target: &JointSet,
    tree: &KinematicTree,
    cfg: &FitConfig,
    theta0: PoseVector,
    s0: ScaleVector,
    free: FreeParams,
) -> Result<FitReport, SolverError> {
    let run = |theta: PoseVector, s: ScaleVector| match cfg.algorithm {
        Algorithm::GaussNewton => run_gauss_newton(target, tree, cfg, theta, s, free),
        Algorithm::Descent => run_descent(target, tree, cfg, theta, s, free),
    };
    let frozen = s0.clone();
    let mut best = run(theta0, s0)?;
    if best.final_cost <= cfg.tol_cost {
        return Ok(best);
    }
    let bounds = tree.scale_bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ RESTART_STREAM);
    for _ in 0..cfg.restarts {
        let theta = random_pose(&mut rng, tree);
        let s = match free {
            FreeParams::PoseAndScale => ScaleVector::new(
                cfg.mode,
                (0..cfg.mode.param_count())
                    .map(|_| rng.gen_range(bounds.lo..=bounds.hi))
                    .collect(),
            )
            .expect("count matches mode"),
            FreeParams::PoseOnly => frozen.clone(),
        };
        let attempt = run(theta, s)?;
        if attempt.final_cost < best.final_cost {
            best = attempt;
        }
        if best.final_cost <= cfg.tol_cost {
            break;
        }
    }
    Ok(best)
}

/// Fits pose and scales simultaneously to one target joint set.
///
/// `init` defaults to the rest parameters `(Θ = 0, S = 1)`; a supplied init
/// is projected onto the feasible box first. The returned cost never
/// exceeds the initial cost. When the first attempt stalls above
/// `cfg.tol_cost`, up to `cfg.restarts` further attempts start from seeded
/// random in-bounds points and the report of the lowest final cost is
/// returned, so a pose local minimum near the init rarely decides the
/// outcome.
pub fn fit(
    target: &JointSet,
    tree: &KinematicTree,
    cfg: &FitConfig,
    init: Option<(PoseVector, ScaleVector)>,
) -> Result<FitReport, SolverError> {
    cfg.validate()?;
    fk::validate_target(target)?;
    let (theta0, s0) = match init {
        Some((theta, s)) => {
            if s.mode() != cfg.mode {
                return Err(SolverError::InvalidConfig(format!(
                    "init scale mode {} does not match configured mode {}",
                    s.mode(),
                    cfg.mode
                )));
            }
            if !theta.is_finite() || !s.values().iter().all(|v| v.is_finite()) {
                return Err(SolverError::InvalidConfig(
                    "init contains a non-finite value".into(),
                ));
            }
            (theta, s)
        }
        None => (PoseVector::zeros(), ScaleVector::ones(cfg.mode)),
    };
    run_with_restarts(target, tree, cfg, theta0, s0, FreeParams::PoseAndScale)
}

/// Fits the pose only, holding the supplied scales fixed.
///
/// The report's `s_hat` echoes the frozen scales, which also hold during
/// restart attempts. Used for fixed-skeleton baselines and by the
/// per-frame phase of [`fit_scales_over_set`].
pub fn fit_pose_only(
    target: &JointSet,
    tree: &KinematicTree,
    cfg: &FitConfig,
    s_frozen: &ScaleVector,
    init_theta: Option<PoseVector>,
) -> Result<FitReport, SolverError> {
    cfg.validate()?;
    fk::validate_target(target)?;
    let theta0 = init_theta.unwrap_or_else(PoseVector::zeros);
    if !theta0.is_finite() || !s_frozen.values().iter().all(|v| v.is_finite()) {
        return Err(SolverError::InvalidConfig(
            "init contains a non-finite value".into(),
        ));
    }
    let s0 = tree.clamp_scales(s_frozen);
    run_with_restarts(target, tree, cfg, theta0, s0, FreeParams::PoseOnly)
}

/// Estimates one shared scale vector across many frames of the same hand.
///
/// Alternates (a) warm-started per-frame pose fits under the current shared
/// scales with (b) a single damped Gauss-Newton step on the scales against
/// all frames' stacked residuals, until the scale step norm drops below
/// `cfg.tol_step` or `cfg.max_iters` rounds elapse. Finishes with a
/// per-frame pose refit under the final scales. Frames whose fit lands far
/// above the set's median cost are retried from a fixed stream of restart
/// poses, so one frame caught in a pose local minimum cannot bias the
/// shared estimate. This is one way of pinning a subject's bone lengths
/// from a short observation window; nothing in the scheme assumes the
/// frames are temporally ordered.
pub fn fit_scales_over_set(
    targets: &[JointSet],
    tree: &KinematicTree,
    cfg: &FitConfig,
) -> Result<(ScaleVector, Vec<PoseVector>), SolverError> {
    cfg.validate()?;
    if targets.is_empty() {
        return Err(SolverError::EmptyTargetSet);
    }
    for target in targets {
        fk::validate_target(target)?;
    }

    let k = cfg.mode.param_count();
    let bounds = tree.scale_bounds();
    let mut s = ScaleVector::ones(cfg.mode);
    let mut poses = vec![PoseVector::zeros(); targets.len()];
    let mut lambda = cfg.damping_init;

    let pose_fit = |theta0: PoseVector, s: &ScaleVector, target: &JointSet| {
        run_gauss_newton(target, tree, cfg, theta0, s.clone(), FreeParams::PoseOnly)
    };
    let rescue_pose = |rng: &mut ChaCha8Rng| -> PoseVector {
        let mut theta = PoseVector::zeros();
        for (d, dof) in tree.dofs().iter().enumerate() {
            let center = 0.5 * (dof.lo + dof.hi);
            let half = 0.45 * (dof.hi - dof.lo);
            theta.0[d] = rng.gen_range(center - half..=center + half);
        }
        theta
    };
    // Warm-started per-frame pose fits. A frame that ends far above the
    // set's median cost is stuck in a pose local minimum; it is retried
    // from seeded restart poses so it cannot bias the shared scales.
    let refit_poses = |poses: &mut Vec<PoseVector>,
                       s: &ScaleVector,
                       round: usize|
     -> Result<(), SolverError> {
        let mut costs = vec![0.0; targets.len()];
        for (f, target) in targets.iter().enumerate() {
            let report = pose_fit(poses[f], s, target)?;
            poses[f] = report.theta_hat;
            costs[f] = report.final_cost;
        }
        let mut sorted = costs.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        let threshold = (RESCUE_FACTOR * median).max(1e-10);
        for (f, target) in targets.iter().enumerate() {
            if costs[f] <= threshold {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(
                cfg.seed ^ RESCUE_SEED ^ ((round as u64) << 32) ^ f as u64,
            );
            for _ in 0..RESCUE_RESTARTS {
                let report = pose_fit(rescue_pose(&mut rng), s, target)?;
                if report.final_cost < costs[f] {
                    costs[f] = report.final_cost;
                    poses[f] = report.theta_hat;
                }
            }
        }
        Ok(())
    };

    for round in 0..cfg.max_iters {
        refit_poses(&mut poses, &s, round)?;

        // One damped Gauss-Newton step on the shared scales: normal
        // equations accumulated over every frame at its current pose.
        let mut total_cost = 0.0;
        let mut h = DMatrix::zeros(k, k);
        let mut g = DVector::zeros(k);
        for (f, target) in targets.iter().enumerate() {
            let (result, _, js) = fk::forward_with_jacobians(&poses[f], &s, tree)?;
            let r = fk::residual(result.joints(), target);
            total_cost += 0.5 * r.norm_squared();
            h += js.matrix().transpose() * js.matrix();
            g += js.matrix().transpose() * &r;
        }
        if !total_cost.is_finite() {
            return Err(SolverError::NonFiniteCost { iteration: 0 });
        }

        let neg_g = -&g;
        let mut step_norm = 0.0;
        let mut moved = false;
        while lambda <= LAMBDA_MAX {
            let mut normal = h.clone();
            for i in 0..k {
                normal[(i, i)] += lambda;
            }
            let Some(chol) = Cholesky::new(normal) else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&neg_g);
            let candidate = ScaleVector::new(
                cfg.mode,
                (0..k)
                    .map(|i| (s.values()[i] + delta[i]).clamp(bounds.lo, bounds.hi))
                    .collect(),
            )
            .expect("candidate scale block has the mode's length");
            let mut new_cost = 0.0;
            for (f, target) in targets.iter().enumerate() {
                new_cost += cost_at(&poses[f], &candidate, tree, target)?;
            }
            if new_cost <= total_cost {
                step_norm = (0..k)
                    .map(|i| {
                        let d = candidate.values()[i] - s.values()[i];
                        d * d
                    })
                    .sum::<f64>()
                    .sqrt();
                s = candidate;
                lambda = (lambda * 0.1).max(LAMBDA_MIN);
                moved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !moved || step_norm < cfg.tol_step {
            break;
        }
    }

    refit_poses(&mut poses, &s, cfg.max_iters)?;
    Ok((s, poses))
}
