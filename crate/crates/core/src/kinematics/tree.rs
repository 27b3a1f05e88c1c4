//! Skeleton topology and rigid-transform composition along it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::rotation::RotationMatrix;
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;

/// Number of articulated parts / joints.
pub const NUM_JOINTS: usize = 24;

/// Parent of each joint in the 24-joint humanoid skeleton.
pub const HUMANOID_PARENTS: [Option<usize>; NUM_JOINTS] = [
    None,
    Some(0),
    Some(0),
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(9),
    Some(9),
    Some(12),
    Some(13),
    Some(14),
    Some(16),
    Some(17),
    Some(18),
    Some(19),
    Some(20),
    Some(21),
];

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
];

/// Left/right counterpart of each part; midline parts map to themselves.
pub const MIRROR_PARTNER: [usize; NUM_JOINTS] =
    [0, 2, 1, 3, 5, 4, 6, 8, 7, 9, 11, 10, 12, 14, 13, 15, 17, 16, 19, 18, 21, 20, 23, 22];

pub const NECK: usize = 12;
pub const HEAD: usize = 15;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KinematicTree {
    parents: Vec<Option<usize>>,
}

impl KinematicTree {
    /// Validates topological order (`parent[i] < i`) and a single root at 0.
    pub fn new(parents: Vec<Option<usize>>) -> Result<Self> {
        if parents.is_empty() {
            return Err(Error::InvalidModel("kinematic tree has no joints".into()));
        }
        if parents[0].is_some() {
            return Err(Error::InvalidModel("joint 0 must be the root".into()));
        }
        for (i, p) in parents.iter().enumerate().skip(1) {
            match p {
                None => return Err(Error::InvalidModel(format!("joint {i} is a second root"))),
                Some(p) if *p >= i => {
                    return Err(Error::InvalidModel(format!("joint {i} has parent {p} out of topological order")))
                }
                _ => {}
            }
        }
        Ok(KinematicTree { parents })
    }

    pub fn humanoid() -> Self {
        KinematicTree { parents: HUMANOID_PARENTS.to_vec() }
    }

    /// Parents encoded with `-1` for the root, as stored in model files.
    pub fn from_signed(parents: &[i64]) -> Result<Self> {
        let parents = parents
            .iter()
            .map(|&p| if p < 0 { None } else { Some(p as usize) })
            .collect();
        Self::new(parents)
    }

    pub fn to_signed(&self) -> Vec<i64> {
        self.parents.iter().map(|p| p.map_or(-1, |p| p as i64)).collect()
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn children(&self, joint: usize) -> impl Iterator<Item = usize> + '_ {
        self.parents
            .iter()
            .enumerate()
            .filter(move |(_, p)| **p == Some(joint))
            .map(|(i, _)| i)
    }

    /// True when `joint` is `ancestor` or lies below it.
    pub fn is_descendant(&self, mut joint: usize, ancestor: usize) -> bool {
        loop {
            if joint == ancestor {
                return true;
            }
            match self.parents[joint] {
                Some(p) => joint = p,
                None => return false,
            }
        }
    }
}

/// `x ↦ R·x + t`, lengths in millimeters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform<T> {
    pub rotation: RotationMatrix<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> RigidTransform<T> {
    pub fn identity() -> Self {
        RigidTransform { rotation: RotationMatrix::identity(), translation: Vec3::zero() }
    }

    /// Rotation by `rotation` about the fixed point `center`.
    pub fn about_point(rotation: RotationMatrix<T>, center: Vec3<T>) -> Self {
        RigidTransform { translation: center - rotation.rotate(&center), rotation }
    }

    pub fn apply(&self, p: &Vec3<T>) -> Vec3<T> {
        self.rotation.rotate(p) + self.translation
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        RigidTransform {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.apply(&other.translation),
        }
    }
}

/// Global rotation of each part and the posed position of each joint.
#[derive(Clone, Debug)]
pub struct GlobalPose<T> {
    pub rotations: Vec<Mat3<T>>,
    pub joints: Vec<Vec3<T>>,
}

impl<T: Real> GlobalPose<T> {
    /// Transform of part `k`: rotation about its rest joint, then carried to its posed joint.
    pub fn transform(&self, k: usize, rest_joint: &Vec3<T>) -> RigidTransform<T> {
        let r = self.rotations[k];
        RigidTransform {
            rotation: RotationMatrix::from_matrix_unchecked(r),
            translation: self.joints[k] - r.mul_vec(rest_joint),
        }
    }
}

/// The root rotates about its own rest joint; every other joint hangs off its
/// parent: `Gₖ = G_parent · Rₖ`, `pₖ = p_parent + G_parent (jₖ − j_parent)`.
pub fn forward_kinematics<T: Real>(
    tree: &KinematicTree,
    local: &[RotationMatrix<T>],
    rest_joints: &[Vec3<T>],
) -> GlobalPose<T> {
    let n = tree.len();
    let mut rotations = Vec::with_capacity(n);
    let mut joints = Vec::with_capacity(n);
    for k in 0..n {
        match tree.parent(k) {
            None => {
                rotations.push(*local[k].matrix());
                joints.push(rest_joints[k]);
            }
            Some(p) => {
                let gp: Mat3<T> = rotations[p];
                rotations.push(gp.matmul(local[k].matrix()));
                // accumulated as a displacement from the rest joint, so the
                // rest pose reproduces the rest joints bit for bit
                let offset = rest_joints[k] - rest_joints[p];
                let moved = (joints[p] - rest_joints[p]) + (gp - Mat3::identity()).mul_vec(&offset);
                joints.push(rest_joints[k] + moved);
            }
        }
    }
    GlobalPose { rotations, joints }
}

pub fn compose_global_transforms<T: Real>(
    tree: &KinematicTree,
    local: &[RotationMatrix<T>],
    rest_joints: &[Vec3<T>],
) -> Vec<RigidTransform<T>> {
    let pose = forward_kinematics(tree, local, rest_joints);
    (0..tree.len()).map(|k| pose.transform(k, &rest_joints[k])).collect()
}

/// Reverse pass of [`forward_kinematics`].
///
/// Takes upstream gradients on the global rotations and posed joints (both
/// consumed as scratch) and returns gradients on the local rotations and the
/// rest joints.
pub fn forward_kinematics_backward<T: Real>(
    tree: &KinematicTree,
    local: &[RotationMatrix<T>],
    rest_joints: &[Vec3<T>],
    pose: &GlobalPose<T>,
    mut d_global: Vec<Mat3<T>>,
    mut d_joints: Vec<Vec3<T>>,
) -> (Vec<Mat3<T>>, Vec<Vec3<T>>) {
    let n = tree.len();
    let mut d_local = vec![Mat3::zero(); n];
    let mut d_rest = vec![Vec3::zero(); n];
    for k in (0..n).rev() {
        match tree.parent(k) {
            None => {
                d_local[k] += d_global[k];
                d_rest[k] += d_joints[k];
            }
            Some(p) => {
                let gp = pose.rotations[p];
                let gk = d_global[k];
                d_local[k] += gp.transpose().matmul(&gk);
                d_global[p] += gk.matmul(&local[k].matrix().transpose());

                let dj = d_joints[k];
                let offset = rest_joints[k] - rest_joints[p];
                d_joints[p] += dj;
                d_global[p] += dj.outer(&offset);
                let back = gp.tr_mul_vec(&dj);
                d_rest[k] += back;
                d_rest[p] -= back;
            }
        }
    }
    (d_local, d_rest)
}
