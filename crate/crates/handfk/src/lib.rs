//! Differentiable forward kinematics for an articulated hand skeleton
//! with learnable bone-length scales.
//!
//! The model is a 16-joint, 15-bone hand with 21 pose parameters (root
//! translation and rotation plus one flexion per finger joint) and a
//! per-bone scale layer that can be tied globally, per finger, or left
//! free per bone. On top of the kinematic layer sit a damped Gauss-Newton
//! solver for direct pose/scale fitting, a synthetic-data generator with
//! a finite-difference oracle, a depth-frame preprocessing pipeline, a
//! small trainable network that regresses pose parameters through the
//! kinematic layer, and evaluation metrics.

pub mod evalkit;
pub mod fk;
pub mod preproc;
pub mod skeleton;
pub mod solver;
pub mod synth;
pub mod toynet;

pub use fk::{FkError, FkResult, PoseJacobian, ScaleJacobian, Transform4};
pub use skeleton::{
    JointSet, KinematicTree, PoseVector, ScaleMode, ScaleVector, SkeletonError, BONE_COUNT,
    COORD_COUNT, DOF_COUNT, FINGER_COUNT, JOINT_COUNT,
};
