use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{
    forward_kinematics, forward_kinematics_backward, rodrigues, AxisAngle, GlobalPose, KinematicTree, RotationMatrix,
};
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;

/// Number of shape coefficients.
pub const NUM_BETAS: usize = 10;

/// Pose feature length for the 24-part skeleton: `(R − I)` of the 23 non-root parts.
pub const POSE_FEATURE_DIM: usize = 9 * 23;

/// Per-part rotation vectors, θ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoseParams<T>(pub Vec<AxisAngle<T>>);

impl<T: Real> PoseParams<T> {
    pub fn zeros(parts: usize) -> Self {
        PoseParams(vec![AxisAngle::zero(); parts])
    }

    pub fn from_flat(values: &[T]) -> Self {
        PoseParams(values.chunks_exact(3).map(|c| AxisAngle::new(c[0], c[1], c[2])).collect())
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.0.iter().flat_map(|a| a.0).collect()
    }

    pub fn to_rotations(&self) -> RotationSet<T> {
        RotationSet(self.0.iter().map(rodrigues).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|a| a.is_finite())
    }
}

/// Shape coefficients, β.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ShapeParams<T>(pub [T; NUM_BETAS]);

impl<T: Real> Default for ShapeParams<T> {
    fn default() -> Self {
        ShapeParams([T::zero(); NUM_BETAS])
    }
}

impl<T: Real> ShapeParams<T> {
    pub fn zeros() -> Self {
        Self::default()
    }

    pub fn from_slice(values: &[T]) -> Self {
        let mut b = Self::default();
        b.0.copy_from_slice(&values[..NUM_BETAS]);
        b
    }
}

/// One rotation matrix per part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent, bound = "T: Real")]
pub struct RotationSet<T>(pub Vec<RotationMatrix<T>>);

impl<T: Real> RotationSet<T> {
    pub fn identity(parts: usize) -> Self {
        RotationSet(vec![RotationMatrix::identity(); parts])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `(R_k − I)` flattened row-major for every non-root part, in part order.
pub fn pose_feature<T: Real>(rotations: &RotationSet<T>) -> Vec<T> {
    let mut out = Vec::with_capacity(9 * rotations.len().saturating_sub(1));
    for r in rotations.0.iter().skip(1) {
        let d = *r.matrix() - Mat3::identity();
        out.extend_from_slice(&d.to_row_array());
    }
    out
}

/// Posed vertices and joints, millimeters.
#[derive(Clone, Debug)]
pub struct SkinOutput<T> {
    pub vertices: Vec<Vec3<T>>,
    pub joints: Vec<Vec3<T>>,
}

/// Intermediate values of a skinning pass, kept for [`BodyModel::skin_backward`].
#[derive(Clone, Debug)]
pub struct SkinState<T> {
    pub rotations: RotationSet<T>,
    pub rest_joints: Vec<Vec3<T>>,
    pub shaped: Vec<Vec3<T>>,
    pub pose: GlobalPose<T>,
    pub vertices: Vec<Vec3<T>>,
}

/// Intermediate values of a joints-only pass.
#[derive(Clone, Debug)]
pub struct JointState<T> {
    pub rotations: RotationSet<T>,
    pub rest_joints: Vec<Vec3<T>>,
    pub pose: GlobalPose<T>,
}

impl<T: Real> JointState<T> {
    pub fn posed_joints(&self) -> &[Vec3<T>] {
        &self.pose.joints
    }
}

/// Gradient of a scalar with respect to the local rotations and β.
#[derive(Clone, Debug)]
pub struct ModelGrad<T> {
    pub rotations: Vec<Mat3<T>>,
    pub betas: [T; NUM_BETAS],
}

impl<T: Real> ModelGrad<T> {
    pub fn zeros(parts: usize) -> Self {
        ModelGrad { rotations: vec![Mat3::zero(); parts], betas: [T::zero(); NUM_BETAS] }
    }

    pub fn add_scaled(&mut self, other: &Self, w: T) {
        for (a, b) in self.rotations.iter_mut().zip(&other.rotations) {
            *a += b.scale(w);
        }
        for (a, b) in self.betas.iter_mut().zip(&other.betas) {
            *a += *b * w;
        }
    }

    /// Chain rule through the exponential map for every part.
    pub fn to_axis_angle(&self, pose: &PoseParams<T>) -> Vec<T> {
        pose.0
            .iter()
            .zip(&self.rotations)
            .flat_map(|(aa, d)| crate::kinematics::rodrigues_backward(aa, d))
            .collect()
    }
}

/// Statistical body model with blendshapes, joint regression and linear
/// blend skinning. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyModel<T> {
    template: Vec<Vec3<T>>,
    /// `[vertex][coord][beta]`
    shape_basis: Vec<T>,
    /// `[vertex][coord][feature]`
    pose_basis: Vec<T>,
    /// `[vertex][part]`
    skinning_weights: Vec<T>,
    /// `[joint][vertex]`
    joint_regressor: Vec<T>,
    tree: KinematicTree,
    part_labels: Vec<usize>,

    // derived
    joint_template: Vec<Vec3<T>>,
    /// `[joint][coord][beta]`
    joint_shape_basis: Vec<T>,
    sparse_weights: Vec<Vec<(usize, T)>>,
}

/// Raw arrays for [`BodyModel::new`].
#[derive(Clone, Debug)]
pub struct BodyModelParts<T> {
    pub template: Vec<Vec3<T>>,
    pub shape_basis: Vec<T>,
    pub pose_basis: Vec<T>,
    pub skinning_weights: Vec<T>,
    pub joint_regressor: Vec<T>,
    pub tree: KinematicTree,
    pub part_labels: Vec<usize>,
}

fn row_sum_tolerance<T: Real>() -> T {
    T::of(1e-9).max(T::epsilon() * T::of(1e3))
}

impl<T: Real> BodyModel<T> {
    /// Builds a model after checking every structural invariant.
    pub fn new(parts: BodyModelParts<T>) -> Result<Self> {
        let BodyModelParts { template, shape_basis, pose_basis, skinning_weights, joint_regressor, tree, part_labels } =
            parts;
        let v = template.len();
        let k = tree.len();
        let feat = 9 * (k - 1);
        let bad = |m: String| Err(Error::InvalidModel(m));

        if v < k {
            return bad(format!("{v} vertices for {k} parts"));
        }
        if template.iter().any(|p| !p.is_finite()) {
            return bad("non-finite template vertex".into());
        }
        if shape_basis.len() != v * 3 * NUM_BETAS {
            return bad(format!("shape basis has {} entries, expected {}", shape_basis.len(), v * 3 * NUM_BETAS));
        }
        if pose_basis.len() != v * 3 * feat {
            return bad(format!("pose basis has {} entries, expected {}", pose_basis.len(), v * 3 * feat));
        }
        if skinning_weights.len() != v * k {
            return bad("skinning weight matrix has wrong size".into());
        }
        if joint_regressor.len() != k * v {
            return bad("joint regressor has wrong size".into());
        }
        if part_labels.len() != v {
            return bad("one part label per vertex required".into());
        }
        if shape_basis.iter().chain(&pose_basis).any(|x| !x.is_finite()) {
            return bad("non-finite blendshape entry".into());
        }
        let tol = row_sum_tolerance::<T>();
        for (i, row) in skinning_weights.chunks_exact(k).enumerate() {
            if row.iter().any(|w| !(*w >= T::zero())) {
                return bad(format!("vertex {i} has a negative or non-finite skinning weight"));
            }
            let s: T = row.iter().copied().sum();
            if (s - T::one()).abs() > tol {
                return bad(format!("skinning weights of vertex {i} sum to {s}"));
            }
        }
        for (j, row) in joint_regressor.chunks_exact(v).enumerate() {
            if row.iter().any(|w| !(*w >= T::zero())) {
                return bad(format!("joint regressor row {j} has a negative or non-finite entry"));
            }
            let s: T = row.iter().copied().sum();
            if (s - T::one()).abs() > tol {
                return bad(format!("joint regressor row {j} sums to {s}"));
            }
        }
        let mut seen = vec![false; k];
        for &l in &part_labels {
            if l >= k {
                return bad(format!("part label {l} out of range"));
            }
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return bad(format!("no vertex labelled with part {missing}"));
        }

        let mut joint_template = vec![Vec3::zero(); k];
        let mut joint_shape_basis = vec![T::zero(); k * 3 * NUM_BETAS];
        for j in 0..k {
            let row = &joint_regressor[j * v..(j + 1) * v];
            for (i, &w) in row.iter().enumerate() {
                if w == T::zero() {
                    continue;
                }
                joint_template[j] += template[i].scale(w);
                for c in 0..3 {
                    for s in 0..NUM_BETAS {
                        joint_shape_basis[(j * 3 + c) * NUM_BETAS + s] += w * shape_basis[(i * 3 + c) * NUM_BETAS + s];
                    }
                }
            }
        }
        let sparse_weights = skinning_weights
            .chunks_exact(k)
            .map(|row| row.iter().copied().enumerate().filter(|(_, w)| *w != T::zero()).collect())
            .collect();

        Ok(BodyModel {
            template,
            shape_basis,
            pose_basis,
            skinning_weights,
            joint_regressor,
            tree,
            part_labels,
            joint_template,
            joint_shape_basis,
            sparse_weights,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.template.len()
    }

    pub fn num_parts(&self) -> usize {
        self.tree.len()
    }

    pub fn pose_feature_dim(&self) -> usize {
        9 * (self.num_parts() - 1)
    }

    pub fn tree(&self) -> &KinematicTree {
        &self.tree
    }

    pub fn template(&self) -> &[Vec3<T>] {
        &self.template
    }

    pub fn part_labels(&self) -> &[usize] {
        &self.part_labels
    }

    pub fn shape_basis(&self) -> &[T] {
        &self.shape_basis
    }

    pub fn pose_basis(&self) -> &[T] {
        &self.pose_basis
    }

    pub fn skinning_weights(&self) -> &[T] {
        &self.skinning_weights
    }

    pub fn joint_regressor(&self) -> &[T] {
        &self.joint_regressor
    }

    pub fn into_parts(self) -> BodyModelParts<T> {
        BodyModelParts {
            template: self.template,
            shape_basis: self.shape_basis,
            pose_basis: self.pose_basis,
            skinning_weights: self.skinning_weights,
            joint_regressor: self.joint_regressor,
            tree: self.tree,
            part_labels: self.part_labels,
        }
    }

    pub fn cast<U: Real>(&self) -> BodyModel<U> {
        let c = |v: &[T]| v.iter().map(|x| U::of(x.to_f64_lossy())).collect::<Vec<U>>();
        BodyModel::new(BodyModelParts {
            template: self.template.iter().map(|p| p.cast()).collect(),
            shape_basis: c(&self.shape_basis),
            pose_basis: c(&self.pose_basis),
            skinning_weights: c(&self.skinning_weights),
            joint_regressor: c(&self.joint_regressor),
            tree: self.tree.clone(),
            part_labels: self.part_labels.clone(),
        })
        .expect("casting preserves model invariants")
    }

    /// `T̄ + B_s(β) + B_p(feature)`: the deformed mesh before posing.
    pub fn shaped_tpose(&self, betas: &ShapeParams<T>, pose_feature: &[T]) -> Vec<Vec3<T>> {
        let feat = self.pose_feature_dim();
        assert_eq!(pose_feature.len(), feat, "pose feature length");
        let any_pose = pose_feature.iter().any(|f| *f != T::zero());
        self.template
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut p = *t;
                for c in 0..3 {
                    let sb = &self.shape_basis[(i * 3 + c) * NUM_BETAS..(i * 3 + c + 1) * NUM_BETAS];
                    let mut acc = T::zero();
                    for (b, s) in betas.0.iter().zip(sb) {
                        acc += *b * *s;
                    }
                    if any_pose {
                        let pb = &self.pose_basis[(i * 3 + c) * feat..(i * 3 + c + 1) * feat];
                        for (f, w) in pose_feature.iter().zip(pb) {
                            acc += *f * *w;
                        }
                    }
                    p.0[c] += acc;
                }
                p
            })
            .collect()
    }

    /// Rest-pose joints `J_reg · (T̄ + B_s(β))`; independent of pose.
    pub fn regress_joints(&self, betas: &ShapeParams<T>) -> Vec<Vec3<T>> {
        self.joint_template
            .iter()
            .enumerate()
            .map(|(j, base)| {
                let mut p = *base;
                for c in 0..3 {
                    let jb = &self.joint_shape_basis[(j * 3 + c) * NUM_BETAS..(j * 3 + c + 1) * NUM_BETAS];
                    for (b, s) in betas.0.iter().zip(jb) {
                        p.0[c] += *b * *s;
                    }
                }
                p
            })
            .collect()
    }

    /// `J_reg · vertices` for an arbitrary vertex set.
    pub fn regress_from_vertices(&self, vertices: &[Vec3<T>]) -> Vec<Vec3<T>> {
        let v = self.num_vertices();
        self.joint_regressor
            .chunks_exact(v)
            .map(|row| row.iter().zip(vertices).fold(Vec3::zero(), |acc, (w, p)| acc + p.scale(*w)))
            .collect()
    }

    pub fn skin(&self, pose: &PoseParams<T>, betas: &ShapeParams<T>) -> SkinOutput<T> {
        self.skin_rotations(&pose.to_rotations(), betas)
    }

    pub fn skin_rotations(&self, rotations: &RotationSet<T>, betas: &ShapeParams<T>) -> SkinOutput<T> {
        let state = self.skin_forward(rotations, betas);
        SkinOutput { joints: state.pose.joints, vertices: state.vertices }
    }

    /// Full forward pass, keeping intermediates.
    pub fn skin_forward(&self, rotations: &RotationSet<T>, betas: &ShapeParams<T>) -> SkinState<T> {
        assert_eq!(rotations.len(), self.num_parts(), "one rotation per part");
        let feature = pose_feature(rotations);
        let shaped = self.shaped_tpose(betas, &feature);
        let rest_joints = self.regress_joints(betas);
        let pose = forward_kinematics(&self.tree, &rotations.0, &rest_joints);
        let vertices = shaped
            .iter()
            .zip(&self.sparse_weights)
            .map(|(t, weights)| {
                // template plus weighted displacements; exact at the rest pose
                let mut moved = Vec3::zero();
                for &(k, w) in weights {
                    let local = *t - rest_joints[k];
                    let turned = (pose.rotations[k] - Mat3::identity()).mul_vec(&local);
                    moved += (turned + (pose.joints[k] - rest_joints[k])).scale(w);
                }
                *t + moved
            })
            .collect();
        SkinState { rotations: rotations.clone(), rest_joints, shaped, pose, vertices }
    }

    /// Reverse pass of [`BodyModel::skin_forward`] for upstream gradients on
    /// the posed vertices and posed joints.
    pub fn skin_backward(&self, state: &SkinState<T>, d_vertices: &[Vec3<T>], d_joints: &[Vec3<T>]) -> ModelGrad<T> {
        let k = self.num_parts();
        let mut d_global = vec![Mat3::zero(); k];
        let mut d_posed = d_joints.to_vec();
        let mut d_rest = vec![Vec3::zero(); k];
        let mut d_shaped = vec![Vec3::zero(); self.num_vertices()];

        for (i, g) in d_vertices.iter().enumerate() {
            d_shaped[i] += *g;
            for &(part, w) in &self.sparse_weights[i] {
                let local = state.shaped[i] - state.rest_joints[part];
                let gw = g.scale(w);
                d_global[part] += gw.outer(&local);
                d_posed[part] += gw;
                let back = state.pose.rotations[part].tr_mul_vec(&gw);
                d_shaped[i] += back - gw;
                d_rest[part] -= back;
            }
        }

        let (mut d_local, d_rest_fk) =
            forward_kinematics_backward(&self.tree, &state.rotations.0, &state.rest_joints, &state.pose, d_global, d_posed);
        for (a, b) in d_rest.iter_mut().zip(&d_rest_fk) {
            *a += *b;
        }

        let mut betas = self.rest_joints_backward(&d_rest);
        let feat = self.pose_feature_dim();
        let mut d_feature = vec![T::zero(); feat];
        for (i, g) in d_shaped.iter().enumerate() {
            for c in 0..3 {
                let gc = g.0[c];
                if gc == T::zero() {
                    continue;
                }
                let sb = &self.shape_basis[(i * 3 + c) * NUM_BETAS..(i * 3 + c + 1) * NUM_BETAS];
                for (b, s) in betas.iter_mut().zip(sb) {
                    *b += gc * *s;
                }
                let pb = &self.pose_basis[(i * 3 + c) * feat..(i * 3 + c + 1) * feat];
                for (d, w) in d_feature.iter_mut().zip(pb) {
                    *d += gc * *w;
                }
            }
        }
        for (part, block) in d_feature.chunks_exact(9).enumerate() {
            d_local[part + 1] += Mat3::from_row_slice(block);
        }
        ModelGrad { rotations: d_local, betas }
    }

    /// Joints-only forward pass; skips blendshapes and vertex skinning.
    pub fn pose_joints(&self, rotations: &RotationSet<T>, betas: &ShapeParams<T>) -> JointState<T> {
        assert_eq!(rotations.len(), self.num_parts(), "one rotation per part");
        let rest_joints = self.regress_joints(betas);
        let pose = forward_kinematics(&self.tree, &rotations.0, &rest_joints);
        JointState { rotations: rotations.clone(), rest_joints, pose }
    }

    pub fn pose_joints_backward(&self, state: &JointState<T>, d_joints: &[Vec3<T>]) -> ModelGrad<T> {
        let k = self.num_parts();
        let (d_local, d_rest) = forward_kinematics_backward(
            &self.tree,
            &state.rotations.0,
            &state.rest_joints,
            &state.pose,
            vec![Mat3::zero(); k],
            d_joints.to_vec(),
        );
        ModelGrad { rotations: d_local, betas: self.rest_joints_backward(&d_rest) }
    }

    fn rest_joints_backward(&self, d_rest: &[Vec3<T>]) -> [T; NUM_BETAS] {
        let mut betas = [T::zero(); NUM_BETAS];
        for (j, g) in d_rest.iter().enumerate() {
            for c in 0..3 {
                let jb = &self.joint_shape_basis[(j * 3 + c) * NUM_BETAS..(j * 3 + c + 1) * NUM_BETAS];
                for (b, s) in betas.iter_mut().zip(jb) {
                    *b += g.0[c] * *s;
                }
            }
        }
        betas
    }

    /// Same model with every template vertex shifted by `offset`.
    pub fn translated(&self, offset: Vec3<T>) -> Self {
        let mut parts = self.clone().into_parts();
        for p in &mut parts.template {
            *p += offset;
        }
        Self::new(parts).expect("translation preserves invariants")
    }
}
