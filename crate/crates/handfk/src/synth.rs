//! Synthetic sample generation and the finite-difference oracle used by
//! the gradient acceptance suite.
//!
//! `fd_jacobian` is deliberately dumb: plain central differences of
//! [`fk::forward`], column by column. It shares no code with the analytic
//! Jacobians beyond the forward map itself, which is what makes it a
//! trustworthy referee for them.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::fk::{self, FkError, PoseJacobian, ScaleJacobian};
use crate::skeleton::{
    JointSet, KinematicTree, PoseVector, ScaleMode, ScaleVector, COORD_COUNT, DOF_COUNT,
    JOINT_COUNT,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error("{param} = {value} is within {h} of a bound; the central stencil would leave the feasible region")]
    StencilAtBound { param: String, value: f64, h: f64 },
    #[error(transparent)]
    Fk(#[from] FkError),
}

/// Sampling recipe for synthetic ground truth.
///
/// Poses are uniform inside the DoF limits shrunk about their midpoints
/// by `margin`; scale components are uniform in `[scale_lo, scale_hi]`;
/// optional Gaussian noise perturbs every joint coordinate.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub seed: u64,
    pub mode: ScaleMode,
    pub margin: f64,
    pub scale_lo: f64,
    pub scale_hi: f64,
    pub noise_sigma_mm: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_samples: 100,
            seed: 0,
            mode: ScaleMode::Five,
            margin: 0.8,
            scale_lo: 0.8,
            scale_hi: 1.25,
            noise_sigma_mm: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSample {
    pub theta: PoseVector,
    pub scales: ScaleVector,
    /// `forward(theta, scales)` plus per-coordinate noise.
    pub joints: JointSet,
}

/// Draws `spec.n_samples` ground-truth samples. Deterministic given the
/// seed: per sample the draw order is the 21 pose values in DoF order,
/// the scale components, then 48 noise values when noise is enabled.
pub fn generate(spec: &SynthSpec, tree: &KinematicTree) -> Result<Vec<SynthSample>, SynthError> {
    if !(spec.margin > 0.0 && spec.margin <= 1.0) {
        return Err(SynthError::InvalidSpec(format!(
            "margin must be in (0, 1], got {}",
            spec.margin
        )));
    }
    if !(spec.noise_sigma_mm >= 0.0 && spec.noise_sigma_mm.is_finite()) {
        return Err(SynthError::InvalidSpec(format!(
            "noise_sigma_mm must be nonnegative, got {}",
            spec.noise_sigma_mm
        )));
    }
    let bounds = tree.scale_bounds();
    if !(spec.scale_lo <= spec.scale_hi && spec.scale_lo >= bounds.lo && spec.scale_hi <= bounds.hi)
    {
        return Err(SynthError::InvalidSpec(format!(
            "scale range [{}, {}] must sit inside the tree bounds [{}, {}]",
            spec.scale_lo, spec.scale_hi, bounds.lo, bounds.hi
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = if spec.noise_sigma_mm > 0.0 {
        Some(Normal::new(0.0, spec.noise_sigma_mm).expect("sigma is finite and positive"))
    } else {
        None
    };

    let mut samples = Vec::with_capacity(spec.n_samples);
    for _ in 0..spec.n_samples {
        let mut theta = PoseVector::zeros();
        for (i, dof) in tree.dofs().iter().enumerate() {
            let mid = 0.5 * (dof.lo + dof.hi);
            let half = 0.5 * (dof.hi - dof.lo) * spec.margin;
            theta[i] = rng.gen_range(mid - half..=mid + half);
        }
        let values = (0..spec.mode.param_count())
            .map(|_| rng.gen_range(spec.scale_lo..=spec.scale_hi))
            .collect();
        let scales = ScaleVector::new(spec.mode, values).expect("count matches mode");

        let mut joints = *fk::forward(&theta, &scales, tree)?.joints();
        if let Some(normal) = &noise {
            for j in 0..JOINT_COUNT {
                for c in 0..3 {
                    joints[j][c] += normal.sample(&mut rng);
                }
            }
        }
        samples.push(SynthSample {
            theta,
            scales,
            joints,
        });
    }
    Ok(samples)
}

/// Central-difference step sizes. The defaults balance truncation against
/// round-off in 64-bit arithmetic for millimetre-scale geometry.
#[derive(Debug, Clone, Copy)]
pub struct FdSteps {
    pub h_theta: f64,
    pub h_s: f64,
}

impl Default for FdSteps {
    fn default() -> Self {
        FdSteps {
            h_theta: 1e-5,
            h_s: 1e-6,
        }
    }
}

/// Finite-difference Jacobians of the forward map at `(theta, s)`.
///
/// The point must sit at least one step inside every limit so both stencil
/// legs stay feasible; anything closer is an error rather than a silently
/// one-sided difference.
pub fn fd_jacobian(
    theta: &PoseVector,
    s: &ScaleVector,
    tree: &KinematicTree,
    steps: FdSteps,
) -> Result<(PoseJacobian, ScaleJacobian), SynthError> {
    for (i, dof) in tree.dofs().iter().enumerate() {
        if theta[i] - dof.lo < steps.h_theta || dof.hi - theta[i] < steps.h_theta {
            return Err(SynthError::StencilAtBound {
                param: format!("theta[{i}]"),
                value: theta[i],
                h: steps.h_theta,
            });
        }
    }
    let bounds = tree.scale_bounds();
    for (k, &v) in s.values().iter().enumerate() {
        if v - bounds.lo < steps.h_s || bounds.hi - v < steps.h_s {
            return Err(SynthError::StencilAtBound {
                param: format!("s[{k}]"),
                value: v,
                h: steps.h_s,
            });
        }
    }

    let mut pose = DMatrix::zeros(COORD_COUNT, DOF_COUNT);
    for d in 0..DOF_COUNT {
        let mut plus = *theta;
        plus[d] += steps.h_theta;
        let mut minus = *theta;
        minus[d] -= steps.h_theta;
        let fp = fk::forward(&plus, s, tree)?.joints().to_flat();
        let fm = fk::forward(&minus, s, tree)?.joints().to_flat();
        for r in 0..COORD_COUNT {
            pose[(r, d)] = (fp[r] - fm[r]) / (2.0 * steps.h_theta);
        }
    }

    let k = s.mode().param_count();
    let mut scale = DMatrix::zeros(COORD_COUNT, k);
    for col in 0..k {
        let plus = s.with_component(col, s.values()[col] + steps.h_s);
        let minus = s.with_component(col, s.values()[col] - steps.h_s);
        let fp = fk::forward(theta, &plus, tree)?.joints().to_flat();
        let fm = fk::forward(theta, &minus, tree)?.joints().to_flat();
        for r in 0..COORD_COUNT {
            scale[(r, col)] = (fp[r] - fm[r]) / (2.0 * steps.h_s);
        }
    }

    Ok((
        PoseJacobian::from_matrix(pose),
        ScaleJacobian::from_matrix(s.mode(), scale),
    ))
}

/// Worst entry deviation between two same-shaped matrices, normalized by
/// their joint magnitude: `max|a - b| / max(max|a|, max|b|, 1e-9)`.
///
/// The normalization is by matrix scale rather than entry by entry because
/// the finite-difference oracle carries round-off of order `eps * |f| / 2h`
/// in absolute terms (a few 1e-8 mm for this skeleton at the default
/// steps), independent of how small any individual derivative entry is.
/// Entry-wise relative comparison would therefore measure the oracle's
/// noise on near-zero entries instead of the Jacobian's fidelity, while a
/// genuinely wrong column is off by the scale of the matrix and still
/// stands out. The 1e-9 floor guards the all-zero case.
pub fn max_relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "comparing mismatched shapes");
    const FLOOR: f64 = 1e-9;
    let scale = a.amax().max(b.amax()).max(FLOOR);
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        worst = worst.max((x - y).abs());
    }
    worst / scale
}
