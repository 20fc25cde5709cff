//! Forward kinematics layer: forward map, Euclidean joint loss, and
//! analytic Jacobians with respect to pose and bone scales.
//!
//! Every joint position is a product of homogeneous 4x4 transforms walked
//! from the root. Per bone segment the order is translation along the
//! scaled bone, then rotation at the distal joint:
//!
//! ```text
//! j_n = Trans(root_t) . Rot_root . PROD_over_chain [ Trans_x(s_c L_c) . Rot_axis(theta_c) ] . origin
//! ```
//!
//! A rotation therefore moves only joints strictly deeper than the joint
//! carrying it, while a bone's scale moves the bone's own child and
//! everything below. The Jacobians exploit exactly that structure: one
//! forward pass caches the per-joint chain transforms, and each column is
//! the same chain product with a single factor replaced by its
//! elementwise derivative matrix.
//!
//! All math is 64-bit; positions are millimetres, angles radians.

use nalgebra::{DMatrix, DVector, Matrix4, Point3, Vector3};
use thiserror::Error;

use crate::skeleton::{
    Axis, DofKind, JointSet, KinematicTree, PoseVector, ScaleMode, ScaleVector, BONE_COUNT,
    COORD_COUNT, DOF_COUNT, JOINT_COUNT,
};

/// Homogeneous 4x4 transform; rigid throughout this module, so the bottom
/// row is (0,0,0,1) for every non-derivative matrix.
pub type Transform4 = Matrix4<f64>;

#[derive(Debug, Error)]
pub enum FkError {
    #[error("pose component {index} is not finite")]
    NonFinitePose { index: usize },
    #[error("pose component {index} = {value} outside limits [{lo}, {hi}]")]
    PoseOutOfLimits {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("scale component {index} is not finite")]
    NonFiniteScale { index: usize },
    #[error("scale component {index} = {value} outside bounds [{lo}, {hi}]")]
    ScaleOutOfBounds {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("target joint {joint} has a non-finite coordinate")]
    NonFiniteTarget { joint: usize },
}

/// Forward-pass output: joint positions plus the cached per-joint chain
/// transforms the Jacobian builders reuse.
#[derive(Debug, Clone)]
pub struct FkResult {
    joints: JointSet,
    globals: [Transform4; JOINT_COUNT],
    per_bone_scales: [f64; BONE_COUNT],
}

impl FkResult {
    pub fn joints(&self) -> &JointSet {
        &self.joints
    }

    /// Cumulative world transform of `joint`'s frame (its bone translation
    /// and own rotations included).
    pub fn joint_transform(&self, joint: usize) -> &Transform4 {
        &self.globals[joint]
    }
}

/// Jacobian of the 48 joint coordinates with respect to the 21 pose
/// parameters; mm per radian, or mm per mm for root translations.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseJacobian(DMatrix<f64>);

impl PoseJacobian {
    pub(crate) fn from_matrix(m: DMatrix<f64>) -> Self {
        assert_eq!((m.nrows(), m.ncols()), (COORD_COUNT, DOF_COUNT));
        PoseJacobian(m)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Jacobian of the 48 joint coordinates with respect to the scale
/// parameters of one mode; mm per unit scale. Column count is the mode's
/// parameter count.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleJacobian {
    mode: ScaleMode,
    matrix: DMatrix<f64>,
}

impl ScaleJacobian {
    pub(crate) fn from_matrix(mode: ScaleMode, matrix: DMatrix<f64>) -> Self {
        assert_eq!(
            (matrix.nrows(), matrix.ncols()),
            (COORD_COUNT, mode.param_count())
        );
        ScaleJacobian { mode, matrix }
    }

    pub fn mode(&self) -> ScaleMode {
        self.mode
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

pub fn translation(offset: Vector3<f64>) -> Transform4 {
    Matrix4::new_translation(&offset)
}

pub fn translation_along(axis: Axis, distance: f64) -> Transform4 {
    let mut offset = Vector3::zeros();
    offset[axis.index()] = distance;
    translation(offset)
}

#[rustfmt::skip]
pub fn rotation(axis: Axis, angle: f64) -> Transform4 {
    let (s, c) = angle.sin_cos();
    match axis {
        Axis::X => Matrix4::new(
            1.0, 0.0, 0.0, 0.0,
            0.0,   c,  -s, 0.0,
            0.0,   s,   c, 0.0,
            0.0, 0.0, 0.0, 1.0,
        ),
        Axis::Y => Matrix4::new(
              c, 0.0,   s, 0.0,
            0.0, 1.0, 0.0, 0.0,
             -s, 0.0,   c, 0.0,
            0.0, 0.0, 0.0, 1.0,
        ),
        Axis::Z => Matrix4::new(
              c,  -s, 0.0, 0.0,
              s,   c, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        ),
    }
}

/// Elementwise angle derivative of [`rotation`]; constant entries
/// (including the homogeneous 1) become zero.
#[rustfmt::skip]
pub(crate) fn rotation_derivative(axis: Axis, angle: f64) -> Transform4 {
    let (s, c) = angle.sin_cos();
    match axis {
        Axis::X => Matrix4::new(
            0.0, 0.0, 0.0, 0.0,
            0.0,  -s,  -c, 0.0,
            0.0,   c,  -s, 0.0,
            0.0, 0.0, 0.0, 0.0,
        ),
        Axis::Y => Matrix4::new(
             -s, 0.0,   c, 0.0,
            0.0, 0.0, 0.0, 0.0,
             -c, 0.0,  -s, 0.0,
            0.0, 0.0, 0.0, 0.0,
        ),
        Axis::Z => Matrix4::new(
             -s,  -c, 0.0, 0.0,
              c,  -s, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
        ),
    }
}

/// Elementwise derivative of `Trans_x(s * L)` with respect to `s`: a
/// single entry `L` in the x-offset slot, zero elsewhere.
pub(crate) fn bone_translation_derivative(rest_length: f64) -> Transform4 {
    let mut m = Matrix4::zeros();
    m[(0, 3)] = rest_length;
    m
}

/// Exact inverse of a rigid transform (rotation transposed, translation
/// counter-rotated); never forms a general matrix inverse.
fn rigid_inverse(m: &Transform4) -> Transform4 {
    let r = m.fixed_view::<3, 3>(0, 0);
    let t = m.fixed_view::<3, 1>(0, 3);
    let rt = r.transpose();
    let back = -(rt * t);
    let mut inv = Matrix4::identity();
    inv.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
    inv.fixed_view_mut::<3, 1>(0, 3).copy_from(&back);
    inv
}

/// Per-bone scale factors for any mode: global broadcasts, five-scales
/// assigns each finger's value to its three bones, multi-scale is the
/// identity. Length/mode consistency is enforced when the [`ScaleVector`]
/// is built, so no mismatch can reach this point.
pub fn expand_scales(s: &ScaleVector, tree: &KinematicTree) -> [f64; BONE_COUNT] {
    let mut per_bone = [0.0; BONE_COUNT];
    match s.mode() {
        ScaleMode::Global => per_bone.fill(s.values()[0]),
        ScaleMode::Five => {
            for (b, bone) in tree.bones().iter().enumerate() {
                per_bone[b] = s.values()[bone.finger];
            }
        }
        ScaleMode::Multi => per_bone.copy_from_slice(s.values()),
    }
    per_bone
}

fn validate_inputs(theta: &PoseVector, s: &ScaleVector, tree: &KinematicTree) -> Result<(), FkError> {
    for (index, (&value, dof)) in theta.0.iter().zip(tree.dofs()).enumerate() {
        if !value.is_finite() {
            return Err(FkError::NonFinitePose { index });
        }
        if value < dof.lo || value > dof.hi {
            return Err(FkError::PoseOutOfLimits {
                index,
                value,
                lo: dof.lo,
                hi: dof.hi,
            });
        }
    }
    let bounds = tree.scale_bounds();
    for (index, &value) in s.values().iter().enumerate() {
        if !value.is_finite() {
            return Err(FkError::NonFiniteScale { index });
        }
        if value < bounds.lo || value > bounds.hi {
            return Err(FkError::ScaleOutOfBounds {
                index,
                value,
                lo: bounds.lo,
                hi: bounds.hi,
            });
        }
    }
    Ok(())
}

fn root_translation_matrix(theta: &PoseVector, tree: &KinematicTree) -> Transform4 {
    let mut offset = Vector3::zeros();
    for &d in tree.root_translation_dofs() {
        offset[tree.dofs()[d].axis.index()] += theta[d];
    }
    translation(offset)
}

/// Evaluates the kinematic chain. Inputs outside their limits or bounds
/// are an error, never clamped.
pub fn forward(
    theta: &PoseVector,
    s: &ScaleVector,
    tree: &KinematicTree,
) -> Result<FkResult, FkError> {
    validate_inputs(theta, s, tree)?;
    let per_bone = expand_scales(s, tree);

    let mut globals = [Transform4::identity(); JOINT_COUNT];
    let mut root = root_translation_matrix(theta, tree);
    for &d in tree.rotation_dofs_of(0) {
        root *= rotation(tree.dofs()[d].axis, theta[d]);
    }
    globals[0] = root;

    for &j in tree.topo_order() {
        if j == 0 {
            continue;
        }
        let b = tree.bone_of_joint(j).expect("non-root joint has a bone");
        let bone = &tree.bones()[b];
        let mut g = globals[bone.parent]
            * translation_along(Axis::X, per_bone[b] * bone.length_mm);
        for &d in tree.rotation_dofs_of(j) {
            g *= rotation(tree.dofs()[d].axis, theta[d]);
        }
        globals[j] = g;
    }

    // A chain transform's translation column is its joint's position: the
    // trailing rotations fix the homogeneous origin.
    let mut joints = JointSet::origin();
    for j in 0..JOINT_COUNT {
        joints[j] = Point3::from(globals[j].fixed_view::<3, 1>(0, 3).into_owned());
    }

    Ok(FkResult {
        joints,
        globals,
        per_bone_scales: per_bone,
    })
}

fn pose_jacobian_matrix(fk: &FkResult, theta: &PoseVector, tree: &KinematicTree) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(COORD_COUNT, DOF_COUNT);
    for (d, dof) in tree.dofs().iter().enumerate() {
        match dof.kind {
            // The root translation is the leftmost factor; its derivative
            // is the same unit basis vector at every joint.
            DofKind::Translation => {
                for n in 0..JOINT_COUNT {
                    m[(3 * n + dof.axis.index(), d)] = 1.0;
                }
            }
            DofKind::Rotation => {
                let jt = dof.joint;
                // Chain product up to just before this joint's rotations.
                let base = if jt == 0 {
                    root_translation_matrix(theta, tree)
                } else {
                    let b = tree.bone_of_joint(jt).expect("non-root joint has a bone");
                    let bone = &tree.bones()[b];
                    fk.globals[bone.parent]
                        * translation_along(Axis::X, fk.per_bone_scales[b] * bone.length_mm)
                };
                let mut cum = base;
                let mut pre = base;
                for &r in tree.rotation_dofs_of(jt) {
                    let rd = &tree.dofs()[r];
                    if r == d {
                        pre = cum;
                        cum *= rotation(rd.axis, theta[r]);
                        break;
                    }
                    cum *= rotation(rd.axis, theta[r]);
                }
                // Column of joint n: the forward chain with this rotation
                // replaced by its derivative. cum^-1 maps the cached world
                // position back into the frame just after the rotation, so
                // the cached suffix product is reused instead of rebuilt.
                let u = pre * rotation_derivative(dof.axis, theta[d]) * rigid_inverse(&cum);
                for &n in tree.descendants_of(jt) {
                    let v = u * fk.joints[n].to_homogeneous();
                    for c in 0..3 {
                        m[(3 * n + c, d)] = v[c];
                    }
                }
            }
        }
    }
    m
}

/// 48x15 matrix of per-bone scale derivatives; mode folding happens on
/// top of this.
fn scale_jacobian_per_bone(fk: &FkResult, tree: &KinematicTree) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(COORD_COUNT, BONE_COUNT);
    for (b, bone) in tree.bones().iter().enumerate() {
        let pre = fk.globals[bone.parent];
        let cum = pre * translation_along(Axis::X, fk.per_bone_scales[b] * bone.length_mm);
        let u = pre * bone_translation_derivative(bone.length_mm) * rigid_inverse(&cum);
        // Unlike a rotation, a bone's scale moves its own child too.
        for &n in tree.subtree_of(bone.child) {
            let v = u * fk.joints[n].to_homogeneous();
            for c in 0..3 {
                m[(3 * n + c, b)] = v[c];
            }
        }
    }
    m
}

fn fold_scale_columns(per_bone: &DMatrix<f64>, mode: ScaleMode, tree: &KinematicTree) -> DMatrix<f64> {
    match mode {
        ScaleMode::Multi => per_bone.clone(),
        ScaleMode::Global => {
            let mut folded = DMatrix::zeros(COORD_COUNT, 1);
            for b in 0..BONE_COUNT {
                folded.column_mut(0).axpy(1.0, &per_bone.column(b), 1.0);
            }
            folded
        }
        ScaleMode::Five => {
            let mut folded = DMatrix::zeros(COORD_COUNT, ScaleMode::Five.param_count());
            for (b, bone) in tree.bones().iter().enumerate() {
                folded
                    .column_mut(bone.finger)
                    .axpy(1.0, &per_bone.column(b), 1.0);
            }
            folded
        }
    }
}

pub fn pose_jacobian(
    theta: &PoseVector,
    s: &ScaleVector,
    tree: &KinematicTree,
) -> Result<PoseJacobian, FkError> {
    let fk = forward(theta, s, tree)?;
    Ok(PoseJacobian::from_matrix(pose_jacobian_matrix(
        &fk, theta, tree,
    )))
}

pub fn scale_jacobian(
    theta: &PoseVector,
    s: &ScaleVector,
    tree: &KinematicTree,
) -> Result<ScaleJacobian, FkError> {
    let fk = forward(theta, s, tree)?;
    let per_bone = scale_jacobian_per_bone(&fk, tree);
    Ok(ScaleJacobian::from_matrix(
        s.mode(),
        fold_scale_columns(&per_bone, s.mode(), tree),
    ))
}

/// One forward pass feeding both Jacobians; what the solver and network
/// training loop call per evaluation point.
pub fn forward_with_jacobians(
    theta: &PoseVector,
    s: &ScaleVector,
    tree: &KinematicTree,
) -> Result<(FkResult, PoseJacobian, ScaleJacobian), FkError> {
    let fk = forward(theta, s, tree)?;
    let pose = PoseJacobian::from_matrix(pose_jacobian_matrix(&fk, theta, tree));
    let per_bone = scale_jacobian_per_bone(&fk, tree);
    let scale = ScaleJacobian::from_matrix(
        s.mode(),
        fold_scale_columns(&per_bone, s.mode(), tree),
    );
    Ok((fk, pose, scale))
}

pub(crate) fn residual(joints: &JointSet, target: &JointSet) -> DVector<f64> {
    let a = joints.to_flat();
    let b = target.to_flat();
    DVector::from_fn(COORD_COUNT, |i, _| a[i] - b[i])
}

pub(crate) fn validate_target(target: &JointSet) -> Result<(), FkError> {
    for (joint, p) in target.0.iter().enumerate() {
        if !p.coords.iter().all(|v| v.is_finite()) {
            return Err(FkError::NonFiniteTarget { joint });
        }
    }
    Ok(())
}

/// Half the squared Euclidean norm of the 48 coordinate residuals, in mm².
pub fn loss(
    theta: &PoseVector,
    s: &ScaleVector,
    tree: &KinematicTree,
    target: &JointSet,
) -> Result<f64, FkError> {
    validate_target(target)?;
    let fk = forward(theta, s, tree)?;
    Ok(0.5 * residual(fk.joints(), target).norm_squared())
}

/// Gradients of [`loss`]: `J_pose^T r` and `J_scale^T r` for the residual
/// `r = forward - target`. This is the backward pass a network wraps.
pub fn loss_gradients(
    theta: &PoseVector,
    s: &ScaleVector,
    tree: &KinematicTree,
    target: &JointSet,
) -> Result<([f64; DOF_COUNT], Vec<f64>), FkError> {
    validate_target(target)?;
    let (fk, pose, scale) = forward_with_jacobians(theta, s, tree)?;
    let r = residual(fk.joints(), target);
    let gt = pose.matrix().transpose() * &r;
    let gs = scale.matrix().transpose() * &r;
    let mut grad_theta = [0.0; DOF_COUNT];
    grad_theta.copy_from_slice(gt.as_slice());
    Ok((grad_theta, gs.as_slice().to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{self, default_tree, BoneSpec};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    /// Default topology with the thumb chain's rest lengths replaced;
    /// keeps toy-chain tests on the canonical 16-joint tree.
    fn tree_with_thumb_lengths(l1: f64, l2: f64, l3: f64) -> skeleton::KinematicTree {
        let tree = default_tree();
        let mut lengths = tree.rest_lengths();
        lengths[0] = l1;
        lengths[1] = l2;
        lengths[2] = l3;
        tree.with_rest_lengths(&lengths).unwrap()
    }

    fn random_pose(tree: &skeleton::KinematicTree, rng: &mut ChaCha8Rng, margin: f64) -> PoseVector {
        let mut theta = PoseVector::zeros();
        for (i, dof) in tree.dofs().iter().enumerate() {
            let mid = 0.5 * (dof.lo + dof.hi);
            let half = 0.5 * (dof.hi - dof.lo) * margin;
            theta[i] = rng.gen_range(mid - half..mid + half);
        }
        theta
    }

    fn random_scales(mode: ScaleMode, rng: &mut ChaCha8Rng) -> ScaleVector {
        let values = (0..mode.param_count())
            .map(|_| rng.gen_range(0.8..1.25))
            .collect();
        ScaleVector::new(mode, values).unwrap()
    }

    #[test]
    fn zero_pose_unit_scales_match_rest_pose() {
        let tree = default_tree();
        let fk = forward(&PoseVector::zeros(), &ScaleVector::ones(ScaleMode::Multi), &tree).unwrap();
        let rest = skeleton::rest_pose_joints(&tree);
        for j in 0..JOINT_COUNT {
            assert_relative_eq!(fk.joints()[j].coords, rest[j].coords, epsilon = 1e-12);
        }
    }

    #[test]
    fn collinear_chain_sums_scaled_lengths() {
        let tree = tree_with_thumb_lengths(2.0, 3.0, 5.0);
        let mut values = vec![1.0; 15];
        values[0] = 1.1;
        values[1] = 0.9;
        values[2] = 1.25;
        let s = ScaleVector::new(ScaleMode::Multi, values).unwrap();
        let fk = forward(&PoseVector::zeros(), &s, &tree).unwrap();
        let expected = 2.0 * 1.1 + 3.0 * 0.9 + 5.0 * 1.25;
        assert_relative_eq!(fk.joints()[3].x, expected, epsilon = 1e-12);
        assert_eq!(fk.joints()[3].y, 0.0);
        assert_eq!(fk.joints()[3].z, 0.0);
    }

    // Unit three-bone chain with a quarter turn at the first joint: the
    // first bone translates before its rotation applies, so the tip lands
    // at (1, 2, 0). Locked after hand-multiplying the 4x4 chain.
    #[test]
    fn quarter_turn_chain_lands_at_one_two_zero() {
        let tree = tree_with_thumb_lengths(1.0, 1.0, 1.0);
        let mut theta = PoseVector::zeros();
        theta[6] = FRAC_PI_2; // thumb MCP flexion
        let fk = forward(&theta, &ScaleVector::ones(ScaleMode::Multi), &tree).unwrap();
        let tip = fk.joints()[3] - fk.joints()[0];
        assert_relative_eq!(tip.x, 1.0, epsilon = 1e-12);
        assert_relative_eq!(tip.y, 2.0, epsilon = 1e-12);
        assert_relative_eq!(tip.z, 0.0, epsilon = 1e-12);
        // Intermediate joints for good measure.
        assert_relative_eq!((fk.joints()[1] - fk.joints()[0]).x, 1.0, epsilon = 1e-12);
        assert_relative_eq!((fk.joints()[2] - fk.joints()[0]).y, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn out_of_range_inputs_are_errors_not_clamps() {
        let tree = default_tree();
        let mut theta = PoseVector::zeros();
        theta[6] = 2.0; // beyond pi/2 flexion limit
        let err = forward(&theta, &ScaleVector::ones(ScaleMode::Five), &tree).unwrap_err();
        assert!(matches!(err, FkError::PoseOutOfLimits { index: 6, .. }), "{err}");

        let mut theta = PoseVector::zeros();
        theta[2] = f64::NAN;
        let err = forward(&theta, &ScaleVector::ones(ScaleMode::Five), &tree).unwrap_err();
        assert!(matches!(err, FkError::NonFinitePose { index: 2 }));

        let s = ScaleVector::new(ScaleMode::Global, vec![2.5]).unwrap();
        let err = forward(&PoseVector::zeros(), &s, &tree).unwrap_err();
        assert!(matches!(err, FkError::ScaleOutOfBounds { index: 0, .. }));
    }

    #[test]
    fn expand_scales_covers_all_modes() {
        let tree = default_tree();
        let g = ScaleVector::new(ScaleMode::Global, vec![1.2]).unwrap();
        assert_eq!(expand_scales(&g, &tree), [1.2; 15]);

        let f = ScaleVector::new(ScaleMode::Five, vec![1.0, 1.0, 1.0, 1.0, 2.0]).unwrap();
        let per_bone = expand_scales(&f, &tree);
        for (b, bone) in tree.bones().iter().enumerate() {
            let expected = if bone.finger == 4 { 2.0 } else { 1.0 };
            assert_eq!(per_bone[b], expected, "bone {b}");
        }

        let mut values = vec![1.0; 15];
        values[7] = 1.7;
        let m = ScaleVector::new(ScaleMode::Multi, values.clone()).unwrap();
        assert_eq!(expand_scales(&m, &tree).to_vec(), values);
    }

    #[test]
    fn loss_matches_direct_summation() {
        let tree = default_tree();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let theta = random_pose(&tree, &mut rng, 0.9);
            let s = random_scales(ScaleMode::Five, &mut rng);
            let fk = forward(&theta, &s, &tree).unwrap();
            let mut target = *fk.joints();
            for j in 0..JOINT_COUNT {
                for c in 0..3 {
                    target[j][c] += rng.gen_range(-5.0..5.0);
                }
            }
            let loss_value = loss(&theta, &s, &tree, &target).unwrap();
            let brute: f64 = fk
                .joints()
                .to_flat()
                .iter()
                .zip(target.to_flat())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            assert_relative_eq!(loss_value, 0.5 * brute, max_relative = 1e-14);
        }
    }

    #[test]
    fn loss_simple_cases() {
        let tree = default_tree();
        let s = ScaleVector::ones(ScaleMode::Global);
        let fk = forward(&PoseVector::zeros(), &s, &tree).unwrap();
        assert_eq!(loss(&PoseVector::zeros(), &s, &tree, fk.joints()).unwrap(), 0.0);

        let mut target = *fk.joints();
        target[9].x += 3.0;
        target[9].y += 4.0;
        assert_relative_eq!(
            loss(&PoseVector::zeros(), &s, &tree, &target).unwrap(),
            12.5,
            epsilon = 1e-12
        );

        let mut bad = target;
        bad[1].z = f64::INFINITY;
        assert!(matches!(
            loss(&PoseVector::zeros(), &s, &tree, &bad),
            Err(FkError::NonFiniteTarget { joint: 1 })
        ));
    }

    // A joint is insensitive to its own rotation: the bone translates
    // before the rotation applies. The classic (-L sin, L cos, 0) column
    // therefore belongs to the NEXT joint down the chain.
    #[test]
    fn two_bone_pose_column_matches_closed_form() {
        let tree = tree_with_thumb_lengths(1.0, 0.7, 0.3);
        let mut theta = PoseVector::zeros();
        theta[6] = 0.4;
        let s = ScaleVector::ones(ScaleMode::Multi);
        let jac = pose_jacobian(&theta, &s, &tree).unwrap();
        let m = jac.matrix();

        // Own joint (thumb MCP is joint 1, rows 3..6): exactly zero.
        for c in 0..3 {
            assert_eq!(m[(3 + c, 6)], 0.0);
        }
        // Next joint down (thumb PIP, joint 2, rows 6..9).
        assert_relative_eq!(m[(6, 6)], -0.7 * 0.4_f64.sin(), epsilon = 1e-12);
        assert_relative_eq!(m[(7, 6)], 0.7 * 0.4_f64.cos(), epsilon = 1e-12);
        assert_relative_eq!(m[(8, 6)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn pose_columns_are_zero_across_fingers() {
        let tree = default_tree();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let theta = random_pose(&tree, &mut rng, 0.8);
        let s = random_scales(ScaleMode::Multi, &mut rng);
        let jac = pose_jacobian(&theta, &s, &tree).unwrap();
        // DoF 9 sits at the index MCP (joint 4); thumb tip is joint 3.
        assert_eq!(tree.dofs()[9].joint, 4);
        for c in 0..3 {
            assert_eq!(jac.matrix()[(3 * 3 + c, 9)], 0.0);
        }
    }

    #[test]
    fn jacobian_sparsity_matches_descendancy() {
        let tree = default_tree();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let theta = random_pose(&tree, &mut rng, 0.8);
        let s = random_scales(ScaleMode::Multi, &mut rng);
        let (_, pose, scale) = forward_with_jacobians(&theta, &s, &tree).unwrap();

        for (d, dof) in tree.dofs().iter().enumerate() {
            if dof.kind == DofKind::Translation {
                continue;
            }
            let movable = tree.descendants_of(dof.joint);
            for n in 0..JOINT_COUNT {
                if !movable.contains(&n) {
                    for c in 0..3 {
                        assert_eq!(pose.matrix()[(3 * n + c, d)], 0.0, "dof {d}, joint {n}");
                    }
                }
            }
        }
        for (b, bone) in tree.bones().iter().enumerate() {
            let movable = tree.subtree_of(bone.child);
            for n in 0..JOINT_COUNT {
                if !movable.contains(&n) {
                    for c in 0..3 {
                        assert_eq!(scale.matrix()[(3 * n + c, b)], 0.0, "bone {b}, joint {n}");
                    }
                }
            }
        }
    }

    #[test]
    fn global_scale_column_at_zero_pose_is_rest_offset_from_root() {
        let tree = default_tree();
        let s = ScaleVector::ones(ScaleMode::Global);
        let jac = scale_jacobian(&PoseVector::zeros(), &s, &tree).unwrap();
        let rest = skeleton::rest_pose_joints(&tree);
        for n in 0..JOINT_COUNT {
            for c in 0..3 {
                let expected = rest[n][c] - rest[0][c];
                assert_relative_eq!(jac.matrix()[(3 * n + c, 0)], expected, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn five_scales_equals_replicated_multi_exactly() {
        let tree = default_tree();
        let five = ScaleVector::new(ScaleMode::Five, vec![1.1, 0.95, 1.2, 0.9, 1.05]).unwrap();
        let replicated: Vec<f64> = tree
            .bones()
            .iter()
            .map(|BoneSpec { finger, .. }| five.values()[*finger])
            .collect();
        let multi = ScaleVector::new(ScaleMode::Multi, replicated).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let theta = random_pose(&tree, &mut rng, 0.8);
        let fk_five = forward(&theta, &five, &tree).unwrap();
        let fk_multi = forward(&theta, &multi, &tree).unwrap();
        assert_eq!(fk_five.joints().to_flat(), fk_multi.joints().to_flat());

        let j_five = scale_jacobian(&theta, &five, &tree).unwrap();
        let j_multi = scale_jacobian(&theta, &multi, &tree).unwrap();
        for f in 0..5 {
            let mut summed = DVector::zeros(COORD_COUNT);
            for (b, bone) in tree.bones().iter().enumerate() {
                if bone.finger == f {
                    summed += j_multi.matrix().column(b);
                }
            }
            assert_eq!(j_five.matrix().column(f), summed, "finger {f}");
        }
    }

    #[test]
    fn gradients_vanish_at_target_and_scale_linearly() {
        let tree = default_tree();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let theta = random_pose(&tree, &mut rng, 0.8);
        let s = random_scales(ScaleMode::Five, &mut rng);
        let fk = forward(&theta, &s, &tree).unwrap();

        let (gt, gs) = loss_gradients(&theta, &s, &tree, fk.joints()).unwrap();
        assert!(gt.iter().all(|&v| v == 0.0));
        assert!(gs.iter().all(|&v| v == 0.0));

        let mut target = *fk.joints();
        for j in 0..JOINT_COUNT {
            for c in 0..3 {
                target[j][c] += rng.gen_range(-3.0..3.0);
            }
        }
        let mut doubled = *fk.joints();
        for j in 0..JOINT_COUNT {
            for c in 0..3 {
                doubled[j][c] = fk.joints()[j][c] + 2.0 * (target[j][c] - fk.joints()[j][c]);
            }
        }
        let (gt1, gs1) = loss_gradients(&theta, &s, &tree, &target).unwrap();
        let (gt2, gs2) = loss_gradients(&theta, &s, &tree, &doubled).unwrap();
        for i in 0..DOF_COUNT {
            assert_relative_eq!(gt2[i], 2.0 * gt1[i], max_relative = 1e-12);
        }
        for i in 0..gs1.len() {
            assert_relative_eq!(gs2[i], 2.0 * gs1[i], max_relative = 1e-12);
        }
    }

    #[test]
    fn bone_lengths_are_conserved_under_pose_and_scale() {
        let tree = default_tree();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for mode in ScaleMode::ALL {
            for _ in 0..50 {
                let theta = random_pose(&tree, &mut rng, 1.0);
                let s = random_scales(mode, &mut rng);
                let per_bone = expand_scales(&s, &tree);
                let fk = forward(&theta, &s, &tree).unwrap();
                for (b, bone) in tree.bones().iter().enumerate() {
                    let measured = (fk.joints()[bone.child] - fk.joints()[bone.parent]).norm();
                    let expected = per_bone[b] * bone.length_mm;
                    assert_relative_eq!(measured, expected, max_relative = 1e-9);
                }
            }
        }
    }

    #[test]
    fn extra_root_rotation_is_an_isometry_about_the_root() {
        let tree = default_tree();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let s = random_scales(ScaleMode::Five, &mut rng);
        // The x rotation is the leftmost root rotation factor, so adding
        // phi to it composes R_x(phi) onto the whole hand.
        let mut theta = random_pose(&tree, &mut rng, 0.5);
        let phi = 0.6;
        let mut rotated = theta;
        rotated[3] += phi;

        let base = forward(&theta, &s, &tree).unwrap();
        let turned = forward(&rotated, &s, &tree).unwrap();
        let root = base.joints()[0];
        let rx = rotation(Axis::X, phi);
        for n in 0..JOINT_COUNT {
            let rel = (base.joints()[n] - root).to_homogeneous();
            let expected = rx * rel;
            let got = turned.joints()[n] - turned.joints()[0];
            for c in 0..3 {
                assert_relative_eq!(got[c], expected[c], epsilon = 1e-9);
            }
        }
        // With zero root rotation any single axis composes the same way.
        theta[3] = 0.0;
        theta[4] = 0.0;
        theta[5] = 0.0;
        for (dof, axis) in [(4, Axis::Y), (5, Axis::Z)] {
            let mut rotated = theta;
            rotated[dof] += phi;
            let base = forward(&theta, &s, &tree).unwrap();
            let turned = forward(&rotated, &s, &tree).unwrap();
            let r = rotation(axis, phi);
            for n in 0..JOINT_COUNT {
                let rel = (base.joints()[n] - base.joints()[0]).to_homogeneous();
                let expected = r * rel;
                let got = turned.joints()[n] - turned.joints()[0];
                for c in 0..3 {
                    assert_relative_eq!(got[c], expected[c], epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn global_scale_is_homogeneous_about_the_root() {
        let tree = default_tree();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for &s_value in &[0.5, 0.77, 1.0, 1.9] {
            let theta = random_pose(&tree, &mut rng, 0.9);
            let unit = forward(&theta, &ScaleVector::ones(ScaleMode::Global), &tree).unwrap();
            let scaled = forward(
                &theta,
                &ScaleVector::new(ScaleMode::Global, vec![s_value]).unwrap(),
                &tree,
            )
            .unwrap();
            let root = unit.joints()[0];
            assert_relative_eq!(scaled.joints()[0].coords, root.coords, epsilon = 1e-12);
            for n in 1..JOINT_COUNT {
                let expected = s_value * (unit.joints()[n] - root);
                let got = scaled.joints()[n] - root;
                for c in 0..3 {
                    assert_relative_eq!(got[c], expected[c], max_relative = 1e-9, epsilon = 1e-12);
                }
            }
        }
    }
}
