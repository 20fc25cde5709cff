//! Hand skeleton model: joint/bone topology, the DoF map, config loading
//! and rest-pose geometry.
//!
//! The canonical tree has 16 joints (a palm root plus five three-joint
//! finger chains), 15 bones and 21 pose parameters. Joint, bone and DoF
//! order come from the config file and are shared by every other module:
//! pose vectors, scale vectors and joint sets are all indexed against the
//! tree they were built for.
//!
//! Bones translate along their local x axis; rotation DoFs default to
//! flexion about local z but the axis is configurable per DoF. The root
//! carries the only translation DoFs.

use std::fmt;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const JOINT_COUNT: usize = 16;
pub const BONE_COUNT: usize = 15;
pub const DOF_COUNT: usize = 21;
pub const FINGER_COUNT: usize = 5;
/// Flattened coordinate count of a [`JointSet`] (16 joints × x,y,z).
pub const COORD_COUNT: usize = 3 * JOINT_COUNT;

#[derive(Debug, Error)]
pub enum SkeletonError {
    #[error("failed to parse skeleton config: {0}")]
    Parse(#[from] toml::de::Error),
    /// Validation failure; the message names the offending field.
    #[error("invalid skeleton config: {0}")]
    Invalid(String),
    #[error("calibration needs at least one annotation frame")]
    EmptyAnnotations,
    #[error("annotation frame {frame} has a non-finite coordinate at joint {joint}")]
    NonFiniteAnnotation { frame: usize, joint: usize },
    #[error("scale vector for mode {mode} needs {expected} values, found {found}")]
    ScaleLength {
        mode: ScaleMode,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DofKind {
    Translation,
    Rotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoneSpec {
    pub parent: usize,
    pub child: usize,
    pub length_mm: f64,
    pub finger: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DofSpec {
    pub joint: usize,
    pub kind: DofKind,
    pub axis: Axis,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleBounds {
    pub lo: f64,
    pub hi: f64,
}

/// On-disk layout of a skeleton config. Field names here are the file
/// schema; see `data/default_hand.toml` for the bundled default.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TreeConfig {
    joints: Vec<JointSpec>,
    bones: Vec<BoneSpec>,
    dofs: Vec<DofSpec>,
    scale_bounds: ScaleBounds,
}

/// Validated kinematic tree. Immutable after load; cheap to share across
/// threads by reference.
#[derive(Debug, Clone)]
pub struct KinematicTree {
    joints: Vec<JointSpec>,
    bones: Vec<BoneSpec>,
    dofs: Vec<DofSpec>,
    scale_bounds: ScaleBounds,
    // Derived lookup tables, all fixed at load time.
    bone_of_joint: [Option<usize>; JOINT_COUNT],
    rotation_dofs: Vec<Vec<usize>>,
    root_translation_dofs: Vec<usize>,
    topo: Vec<usize>,
    subtree: Vec<Vec<usize>>,
}

impl KinematicTree {
    pub fn joints(&self) -> &[JointSpec] {
        &self.joints
    }

    pub fn bones(&self) -> &[BoneSpec] {
        &self.bones
    }

    pub fn dofs(&self) -> &[DofSpec] {
        &self.dofs
    }

    pub fn scale_bounds(&self) -> ScaleBounds {
        self.scale_bounds
    }

    pub fn joint_name(&self, joint: usize) -> &str {
        &self.joints[joint].name
    }

    pub fn parent_of(&self, joint: usize) -> Option<usize> {
        self.joints[joint].parent
    }

    /// Bone whose child end sits at `joint`; `None` for the root.
    pub fn bone_of_joint(&self, joint: usize) -> Option<usize> {
        self.bone_of_joint[joint]
    }

    /// Rotation DoF indices carried by `joint`, in DoF-map order.
    pub fn rotation_dofs_of(&self, joint: usize) -> &[usize] {
        &self.rotation_dofs[joint]
    }

    /// Translation DoF indices (root only), in DoF-map order.
    pub fn root_translation_dofs(&self) -> &[usize] {
        &self.root_translation_dofs
    }

    /// Joint indices with every parent listed before its children; the
    /// root comes first.
    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    /// `joint` followed by all of its descendants in depth-first order.
    pub fn subtree_of(&self, joint: usize) -> &[usize] {
        &self.subtree[joint]
    }

    /// Strict descendants of `joint` (the joints its rotations move).
    pub fn descendants_of(&self, joint: usize) -> &[usize] {
        &self.subtree[joint][1..]
    }

    pub fn rest_lengths(&self) -> [f64; BONE_COUNT] {
        let mut lengths = [0.0; BONE_COUNT];
        for (i, bone) in self.bones.iter().enumerate() {
            lengths[i] = bone.length_mm;
        }
        lengths
    }

    /// Copy of this tree with new rest lengths, revalidated.
    pub fn with_rest_lengths(
        &self,
        lengths: &[f64; BONE_COUNT],
    ) -> Result<KinematicTree, SkeletonError> {
        let mut config = self.to_config();
        for (bone, &length) in config.bones.iter_mut().zip(lengths.iter()) {
            bone.length_mm = length;
        }
        validate(config)
    }

    /// Componentwise projection of a pose onto the DoF limits.
    pub fn clamp_pose(&self, theta: &PoseVector) -> PoseVector {
        let mut clamped = *theta;
        for (i, dof) in self.dofs.iter().enumerate() {
            clamped.0[i] = theta.0[i].clamp(dof.lo, dof.hi);
        }
        clamped
    }

    /// Componentwise projection of scale values onto the scale bounds.
    pub fn clamp_scales(&self, s: &ScaleVector) -> ScaleVector {
        let values = s
            .values()
            .iter()
            .map(|v| v.clamp(self.scale_bounds.lo, self.scale_bounds.hi))
            .collect();
        ScaleVector {
            mode: s.mode(),
            values,
        }
    }

    fn to_config(&self) -> TreeConfig {
        TreeConfig {
            joints: self.joints.clone(),
            bones: self.bones.clone(),
            dofs: self.dofs.clone(),
            scale_bounds: self.scale_bounds,
        }
    }

    /// Serializes the tree back to the config file schema.
    pub fn to_config_string(&self) -> String {
        toml::to_string(&self.to_config()).expect("tree config serializes")
    }
}

/// Pose parameter vector, indexed by the tree's DoF map. Rotations are
/// radians, root translations millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseVector(pub [f64; DOF_COUNT]);

impl PoseVector {
    pub fn zeros() -> Self {
        PoseVector([0.0; DOF_COUNT])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn from_slice(values: &[f64]) -> Option<Self> {
        let array: [f64; DOF_COUNT] = values.try_into().ok()?;
        Some(PoseVector(array))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<usize> for PoseVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for PoseVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleMode {
    Global,
    Five,
    Multi,
}

impl ScaleMode {
    pub const ALL: [ScaleMode; 3] = [ScaleMode::Global, ScaleMode::Five, ScaleMode::Multi];

    pub fn param_count(self) -> usize {
        match self {
            ScaleMode::Global => 1,
            ScaleMode::Five => FINGER_COUNT,
            ScaleMode::Multi => BONE_COUNT,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScaleMode::Global => "global",
            ScaleMode::Five => "five",
            ScaleMode::Multi => "multi",
        }
    }

    pub fn from_name(name: &str) -> Option<ScaleMode> {
        match name {
            "global" => Some(ScaleMode::Global),
            "five" => Some(ScaleMode::Five),
            "multi" => Some(ScaleMode::Multi),
            _ => None,
        }
    }
}

impl fmt::Display for ScaleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Bone scale parameters: one value (global), one per finger, or one per
/// bone. The length/mode pairing is enforced at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleVector {
    mode: ScaleMode,
    values: Vec<f64>,
}

impl ScaleVector {
    pub fn new(mode: ScaleMode, values: Vec<f64>) -> Result<Self, SkeletonError> {
        if values.len() != mode.param_count() {
            return Err(SkeletonError::ScaleLength {
                mode,
                expected: mode.param_count(),
                found: values.len(),
            });
        }
        Ok(ScaleVector { mode, values })
    }

    pub fn uniform(mode: ScaleMode, value: f64) -> Self {
        ScaleVector {
            mode,
            values: vec![value; mode.param_count()],
        }
    }

    pub fn ones(mode: ScaleMode) -> Self {
        Self::uniform(mode, 1.0)
    }

    pub fn mode(&self) -> ScaleMode {
        self.mode
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Copy with component `index` replaced; used by stencils and solvers.
    pub fn with_component(&self, index: usize, value: f64) -> Self {
        let mut values = self.values.clone();
        values[index] = value;
        ScaleVector {
            mode: self.mode,
            values,
        }
    }
}

/// The 16 joint positions of one hand, in millimetres, ordered like
/// `KinematicTree::joints`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointSet(pub [Point3<f64>; JOINT_COUNT]);

impl JointSet {
    pub fn origin() -> Self {
        JointSet([Point3::origin(); JOINT_COUNT])
    }

    pub fn to_flat(&self) -> [f64; COORD_COUNT] {
        let mut flat = [0.0; COORD_COUNT];
        for (n, p) in self.0.iter().enumerate() {
            flat[3 * n] = p.x;
            flat[3 * n + 1] = p.y;
            flat[3 * n + 2] = p.z;
        }
        flat
    }

    pub fn from_flat(flat: &[f64]) -> Option<Self> {
        if flat.len() != COORD_COUNT {
            return None;
        }
        let mut joints = [Point3::origin(); JOINT_COUNT];
        for (n, joint) in joints.iter_mut().enumerate() {
            *joint = Point3::new(flat[3 * n], flat[3 * n + 1], flat[3 * n + 2]);
        }
        Some(JointSet(joints))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|p| p.coords.iter().all(|v| v.is_finite()))
    }
}

impl std::ops::Index<usize> for JointSet {
    type Output = Point3<f64>;
    fn index(&self, i: usize) -> &Point3<f64> {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for JointSet {
    fn index_mut(&mut self, i: usize) -> &mut Point3<f64> {
        &mut self.0[i]
    }
}

/// Parses and validates a skeleton config.
pub fn load_tree(config_text: &str) -> Result<KinematicTree, SkeletonError> {
    let config: TreeConfig = toml::from_str(config_text)?;
    validate(config)
}

/// The bundled default hand (representative adult rest lengths).
pub fn default_tree() -> KinematicTree {
    load_tree(include_str!("../data/default_hand.toml")).expect("bundled default config is valid")
}

fn invalid(msg: String) -> SkeletonError {
    SkeletonError::Invalid(msg)
}

fn validate(config: TreeConfig) -> Result<KinematicTree, SkeletonError> {
    let TreeConfig {
        joints,
        bones,
        dofs,
        scale_bounds,
    } = config;

    if joints.len() != JOINT_COUNT {
        return Err(invalid(format!(
            "joints: expected {} joints, found {}",
            JOINT_COUNT,
            joints.len()
        )));
    }
    if bones.len() != BONE_COUNT {
        return Err(invalid(format!(
            "bones: expected {} bones, found {}",
            BONE_COUNT,
            bones.len()
        )));
    }
    if dofs.len() != DOF_COUNT {
        return Err(invalid(format!(
            "dofs: expected {} DoFs, found {}",
            DOF_COUNT,
            dofs.len()
        )));
    }

    if joints[0].parent.is_some() {
        return Err(invalid("joints[0].parent: the root has no parent".into()));
    }
    for (j, joint) in joints.iter().enumerate().skip(1) {
        match joint.parent {
            None => {
                return Err(invalid(format!(
                    "joints[{j}].parent: only the root may omit a parent"
                )))
            }
            Some(p) if p >= JOINT_COUNT || p == j => {
                return Err(invalid(format!("joints[{j}].parent: invalid index {p}")))
            }
            Some(_) => {}
        }
    }
    for (j, joint) in joints.iter().enumerate() {
        if joints[..j].iter().any(|other| other.name == joint.name) {
            return Err(invalid(format!(
                "joints[{j}].name: duplicate name {:?}",
                joint.name
            )));
        }
    }

    let mut bone_of_joint = [None; JOINT_COUNT];
    for (i, bone) in bones.iter().enumerate() {
        if bone.parent >= JOINT_COUNT {
            return Err(invalid(format!("bones[{i}].parent: invalid index")));
        }
        if bone.child == 0 || bone.child >= JOINT_COUNT {
            return Err(invalid(format!(
                "bones[{i}].child: must be a non-root joint index"
            )));
        }
        if joints[bone.child].parent != Some(bone.parent) {
            return Err(invalid(format!(
                "bones[{i}]: endpoints disagree with joints[{}].parent",
                bone.child
            )));
        }
        if !(bone.length_mm.is_finite() && bone.length_mm > 0.0) {
            return Err(invalid(format!(
                "bones[{i}].length_mm: must be positive, got {}",
                bone.length_mm
            )));
        }
        if bone.finger >= FINGER_COUNT {
            return Err(invalid(format!(
                "bones[{i}].finger: must be 0..{FINGER_COUNT}"
            )));
        }
        if bone_of_joint[bone.child].is_some() {
            return Err(invalid(format!(
                "bones[{i}].child: joint {} is the child of two bones",
                bone.child
            )));
        }
        bone_of_joint[bone.child] = Some(i);
    }

    // 15 bones with unique children over 15 non-root joints: every joint
    // must still reach the root through parent links (no detached cycle).
    for j in 1..JOINT_COUNT {
        if bone_of_joint[j].is_none() {
            return Err(invalid(format!("bones: joint {j} has no bone leading to it")));
        }
        let mut cursor = j;
        let mut hops = 0;
        while let Some(p) = joints[cursor].parent {
            cursor = p;
            hops += 1;
            if hops > JOINT_COUNT {
                return Err(invalid(format!("joints[{j}]: cycle in parent links")));
            }
        }
        if cursor != 0 {
            return Err(invalid(format!("joints[{j}]: not connected to the root")));
        }
    }

    for finger in 0..FINGER_COUNT {
        let chain: Vec<usize> = (0..bones.len())
            .filter(|&i| bones[i].finger == finger)
            .collect();
        if chain.len() != 3 {
            return Err(invalid(format!(
                "bones: finger {finger} has {} bones, expected 3",
                chain.len()
            )));
        }
        let rooted: Vec<usize> = chain
            .iter()
            .copied()
            .filter(|&i| bones[i].parent == 0)
            .collect();
        if rooted.len() != 1 {
            return Err(invalid(format!(
                "bones: finger {finger} must start with exactly one bone at the root"
            )));
        }
        let mut tip = bones[rooted[0]].child;
        for _ in 0..2 {
            match chain.iter().find(|&&i| bones[i].parent == tip) {
                Some(&next) => tip = bones[next].child,
                None => {
                    return Err(invalid(format!(
                        "bones: finger {finger} does not form a three-bone chain"
                    )))
                }
            }
        }
    }

    for (i, dof) in dofs.iter().enumerate() {
        if dof.joint >= JOINT_COUNT {
            return Err(invalid(format!("dofs[{i}].joint: invalid index")));
        }
        if dof.kind == DofKind::Translation && dof.joint != 0 {
            return Err(invalid(format!(
                "dofs[{i}]: translation DoFs attach only to the root"
            )));
        }
        if !(dof.lo.is_finite() && dof.hi.is_finite() && dof.lo < dof.hi) {
            return Err(invalid(format!(
                "dofs[{i}]: limits must be finite with lo < hi, got [{}, {}]",
                dof.lo, dof.hi
            )));
        }
    }

    if !(scale_bounds.lo.is_finite()
        && scale_bounds.hi.is_finite()
        && scale_bounds.lo > 0.0
        && scale_bounds.lo < scale_bounds.hi)
    {
        return Err(invalid(format!(
            "scale_bounds: need 0 < lo < hi, got [{}, {}]",
            scale_bounds.lo, scale_bounds.hi
        )));
    }

    let mut rotation_dofs = vec![Vec::new(); JOINT_COUNT];
    let mut root_translation_dofs = Vec::new();
    for (i, dof) in dofs.iter().enumerate() {
        match dof.kind {
            DofKind::Translation => root_translation_dofs.push(i),
            DofKind::Rotation => rotation_dofs[dof.joint].push(i),
        }
    }

    let mut children = vec![Vec::new(); JOINT_COUNT];
    for (j, joint) in joints.iter().enumerate() {
        if let Some(p) = joint.parent {
            children[p].push(j);
        }
    }
    let mut topo = Vec::with_capacity(JOINT_COUNT);
    let mut stack = vec![0usize];
    while let Some(j) = stack.pop() {
        topo.push(j);
        // Reverse keeps depth-first order aligned with child index order.
        for &c in children[j].iter().rev() {
            stack.push(c);
        }
    }
    let mut subtree = vec![Vec::new(); JOINT_COUNT];
    for start in 0..JOINT_COUNT {
        let mut acc = Vec::new();
        let mut stack = vec![start];
        while let Some(j) = stack.pop() {
            acc.push(j);
            for &c in children[j].iter().rev() {
                stack.push(c);
            }
        }
        subtree[start] = acc;
    }

    Ok(KinematicTree {
        joints,
        bones,
        dofs,
        scale_bounds,
        bone_of_joint,
        rotation_dofs,
        root_translation_dofs,
        topo,
        subtree,
    })
}

/// Replaces each bone's rest length with the mean over `annotations` of
/// the distance between its endpoints. Topology is untouched.
pub fn calibrate_rest_lengths(
    tree: &KinematicTree,
    annotations: &[JointSet],
) -> Result<KinematicTree, SkeletonError> {
    if annotations.is_empty() {
        return Err(SkeletonError::EmptyAnnotations);
    }
    for (frame, joints) in annotations.iter().enumerate() {
        for (joint, p) in joints.0.iter().enumerate() {
            if !p.coords.iter().all(|v| v.is_finite()) {
                return Err(SkeletonError::NonFiniteAnnotation { frame, joint });
            }
        }
    }
    let mut lengths = [0.0; BONE_COUNT];
    for (i, bone) in tree.bones().iter().enumerate() {
        let sum: f64 = annotations
            .iter()
            .map(|j| (j[bone.child] - j[bone.parent]).norm())
            .sum();
        lengths[i] = sum / annotations.len() as f64;
    }
    tree.with_rest_lengths(&lengths)
}

/// Joint positions at the zero pose with unit scales: every chain runs
/// along its bones' local x axes from the root at the origin.
pub fn rest_pose_joints(tree: &KinematicTree) -> JointSet {
    let mut joints = JointSet::origin();
    for &j in tree.topo_order() {
        if let Some(b) = tree.bone_of_joint(j) {
            let bone = &tree.bones()[b];
            let mut p = joints[bone.parent];
            p.x += bone.length_mm;
            joints[j] = p;
        }
    }
    joints
}
