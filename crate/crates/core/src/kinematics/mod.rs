//! Rotation representations, SO(3) projection and kinematic-tree composition.

pub mod rotation;
pub mod so3;
pub mod tree;

pub use rotation::{
    quat_distance, rodrigues, rodrigues_backward, rodrigues_jacobian, rotation_to_axis_angle, AxisAngle, Quaternion,
    RotationMatrix,
};
pub use so3::{project_to_so3, project_to_so3_backward, project_to_so3_cached, svd3, PolarFactors, Svd3};
pub use tree::{
    compose_global_transforms, forward_kinematics, forward_kinematics_backward, GlobalPose, KinematicTree,
    RigidTransform, HEAD, HUMANOID_PARENTS, JOINT_NAMES, MIRROR_PARTNER, NECK, NUM_JOINTS,
};
