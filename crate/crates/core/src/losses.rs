//! Supervision losses and their gradients.
//!
//! Every term is evaluated against the model's posed joints, so gradients
//! flow through forward kinematics and the shape-dependent rest joints.
//! Gradients are first collected on local rotation matrices and β
//! ([`ModelGrad`]) and then chained to whichever parameterization is in use:
//! axis-angle for the fitter, raw 3×3 blocks through the SVD projection for
//! the regressor.

use serde::{Deserialize, Serialize};

use crate::body_model::{BodyModel, ModelGrad, PoseParams, RotationSet, ShapeParams, NUM_BETAS};
use crate::camera::{Camera, Point2};
use crate::error::{Error, Result};
use crate::kinematics::{project_to_so3_backward, project_to_so3_cached, PolarFactors};
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;

/// Raw regressor output length for a 24-part model: 24 blocks of 9, then β.
pub const RAW_OUTPUT_DIM: usize = 24 * 9 + NUM_BETAS;

/// Which annotations an example carries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationMask {
    pub latent: bool,
    pub joints_3d: bool,
    pub joints_2d: bool,
}

impl AnnotationMask {
    pub const ALL: Self = AnnotationMask { latent: true, joints_3d: true, joints_2d: true };
    pub const ONLY_2D: Self = AnnotationMask { latent: false, joints_3d: false, joints_2d: true };

    pub fn is_empty(&self) -> bool {
        !(self.latent || self.joints_3d || self.joints_2d)
    }

    /// Terms enabled in both masks.
    pub fn intersect(&self, other: &Self) -> Self {
        AnnotationMask {
            latent: self.latent && other.latent,
            joints_3d: self.joints_3d && other.joints_3d,
            joints_2d: self.joints_2d && other.joints_2d,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub latent: f64,
    pub joints_3d: f64,
    pub joints_2d: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { latent: 1.0, joints_3d: 1.0, joints_2d: 1.0 }
    }
}

/// Ground truth available for one example. Fields the mask leaves off are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Targets<T> {
    pub rotations: Option<RotationSet<T>>,
    pub betas: Option<ShapeParams<T>>,
    pub joints_3d: Option<Vec<Vec3<T>>>,
    pub joints_2d: Option<Vec<Point2<T>>>,
}

impl<T: Real> Targets<T> {
    /// Mask of the annotations present.
    pub fn available(&self) -> AnnotationMask {
        AnnotationMask {
            latent: self.rotations.is_some() && self.betas.is_some(),
            joints_3d: self.joints_3d.is_some(),
            joints_2d: self.joints_2d.is_some(),
        }
    }
}

fn l1_sign<T: Real>(d: T) -> T {
    if d > T::zero() {
        T::one()
    } else if d < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Sum of absolute differences over every rotation entry and every β.
/// The subgradient at a tie is zero.
pub fn latent_loss<T: Real>(
    pred_rotations: &RotationSet<T>,
    pred_betas: &ShapeParams<T>,
    gt_rotations: &RotationSet<T>,
    gt_betas: &ShapeParams<T>,
) -> (T, ModelGrad<T>) {
    let mut grad = ModelGrad::zeros(pred_rotations.len());
    let mut value = T::zero();
    for ((p, g), d) in pred_rotations.0.iter().zip(&gt_rotations.0).zip(grad.rotations.iter_mut()) {
        for a in 0..3 {
            for b in 0..3 {
                let diff = p.matrix().0[a][b] - g.matrix().0[a][b];
                value += diff.abs();
                d.0[a][b] = l1_sign(diff);
            }
        }
    }
    for s in 0..NUM_BETAS {
        let diff = pred_betas.0[s] - gt_betas.0[s];
        value += diff.abs();
        grad.betas[s] = l1_sign(diff);
    }
    (value, grad)
}

/// `Σ‖pred − gt‖²` over joints, mm².
pub fn joints_3d_loss<T: Real>(pred: &[Vec3<T>], gt: &[Vec3<T>]) -> (T, Vec<Vec3<T>>) {
    assert_eq!(pred.len(), gt.len(), "joint count");
    let mut value = T::zero();
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let d = *p - *g;
            value += d.norm_squared();
            d.scale(T::of(2.0))
        })
        .collect();
    (value, grad)
}

/// `Σ‖pred − gt‖²` over joints, px².
pub fn joints_2d_loss<T: Real>(pred: &[Point2<T>], gt: &[Point2<T>]) -> (T, Vec<Point2<T>>) {
    assert_eq!(pred.len(), gt.len(), "joint count");
    let two = T::of(2.0);
    let mut value = T::zero();
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let (du, dv) = (p[0] - g[0], p[1] - g[1]);
            value += du * du + dv * dv;
            [two * du, two * dv]
        })
        .collect();
    (value, grad)
}

/// Weighted values of the individual terms; disabled terms are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TermValues {
    pub latent: f64,
    pub joints_3d: f64,
    pub joints_2d: f64,
}

/// A loss value with its gradient in the parameterization it was evaluated in.
#[derive(Clone, Debug)]
pub struct LossValue<T> {
    pub value: T,
    /// Unweighted term values, zero for disabled terms.
    pub terms: TermValues,
    /// Gradient w.r.t. the 72 axis-angle values; empty for raw evaluation.
    pub pose: Vec<T>,
    pub shape: [T; NUM_BETAS],
    /// Gradient w.r.t. the 226 raw outputs when evaluated from them.
    pub raw: Option<Vec<T>>,
}

/// The combined loss for one example under a mask and term weights.
#[derive(Clone, Copy, Debug)]
pub struct Objective<'a, T> {
    pub model: &'a BodyModel<T>,
    pub camera: &'a Camera<T>,
    pub mask: AnnotationMask,
    pub weights: LossWeights,
}

impl<'a, T: Real> Objective<'a, T> {
    pub fn new(model: &'a BodyModel<T>, camera: &'a Camera<T>, mask: AnnotationMask, weights: LossWeights) -> Self {
        Objective { model, camera, mask, weights }
    }

    /// Loss and gradient on local rotations and β.
    pub fn evaluate_rotations(
        &self,
        rotations: &RotationSet<T>,
        betas: &ShapeParams<T>,
        targets: &Targets<T>,
    ) -> Result<(T, TermValues, ModelGrad<T>)> {
        if self.mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        let have = targets.available();
        if self.mask.intersect(&have) != self.mask {
            return Err(Error::InvalidArgument(format!("mask {:?} asks for annotations missing from {:?}", self.mask, have)));
        }
        let k = self.model.num_parts();
        let mut grad = ModelGrad::zeros(k);
        let mut total = T::zero();
        let mut terms = TermValues::default();

        if self.mask.latent {
            let (gt_r, gt_b) = (targets.rotations.as_ref().expect("checked"), targets.betas.as_ref().expect("checked"));
            let (v, g) = latent_loss(rotations, betas, gt_r, gt_b);
            let w = T::of(self.weights.latent);
            total += w * v;
            terms.latent = v.to_f64_lossy();
            grad.add_scaled(&g, w);
        }
        if self.mask.joints_3d || self.mask.joints_2d {
            let state = self.model.pose_joints(rotations, betas);
            let joints = state.posed_joints();
            let mut d_joints = vec![Vec3::zero(); k];
            if self.mask.joints_3d {
                let (v, g) = joints_3d_loss(joints, targets.joints_3d.as_ref().expect("checked"));
                let w = T::of(self.weights.joints_3d);
                total += w * v;
                terms.joints_3d = v.to_f64_lossy();
                for (d, gj) in d_joints.iter_mut().zip(&g) {
                    *d += gj.scale(w);
                }
            }
            if self.mask.joints_2d {
                let pixels = self.camera.project(joints)?;
                let (v, g) = joints_2d_loss(&pixels, targets.joints_2d.as_ref().expect("checked"));
                let w = T::of(self.weights.joints_2d);
                total += w * v;
                terms.joints_2d = v.to_f64_lossy();
                let weighted: Vec<Point2<T>> = g.iter().map(|p| [p[0] * w, p[1] * w]).collect();
                for (d, gj) in d_joints.iter_mut().zip(self.camera.project_backward(joints, &weighted)?) {
                    *d += gj;
                }
            }
            grad.add_scaled(&self.model.pose_joints_backward(&state, &d_joints), T::one());
        }
        Ok((total, terms, grad))
    }

    /// Loss with gradient on the 72 axis-angle values and β.
    pub fn evaluate_axis_angle(&self, pose: &PoseParams<T>, betas: &ShapeParams<T>, targets: &Targets<T>) -> Result<LossValue<T>> {
        let (value, terms, grad) = self.evaluate_rotations(&pose.to_rotations(), betas, targets)?;
        Ok(LossValue { value, terms, pose: grad.to_axis_angle(pose), shape: grad.betas, raw: None })
    }

    /// Loss with gradient on the raw outputs, through the SVD projection.
    pub fn evaluate_raw(&self, raw: &[T], targets: &Targets<T>) -> Result<LossValue<T>> {
        let decoded = decode_raw(raw)?;
        let (value, terms, grad) = self.evaluate_rotations(&decoded.rotations, &decoded.betas, targets)?;
        Ok(LossValue { value, terms, pose: Vec::new(), shape: grad.betas, raw: Some(decoded.backward(&grad)) })
    }
}

/// Raw outputs mapped to rotations and β, with the factors for the backward pass.
#[derive(Clone, Debug)]
pub struct DecodedOutputs<T> {
    pub rotations: RotationSet<T>,
    pub betas: ShapeParams<T>,
    pub factors: Vec<PolarFactors<T>>,
}

impl<T: Real> DecodedOutputs<T> {
    /// Gradient on the raw outputs given a gradient on rotations and β.
    pub fn backward(&self, grad: &ModelGrad<T>) -> Vec<T> {
        let mut out = Vec::with_capacity(self.factors.len() * 9 + NUM_BETAS);
        for (f, d) in self.factors.iter().zip(&grad.rotations) {
            out.extend_from_slice(&project_to_so3_backward(f, d).to_row_array());
        }
        out.extend_from_slice(&grad.betas);
        out
    }
}

/// Splits `raw` into 3×3 row-major blocks projected onto SO(3) and the
/// trailing β values.
pub fn decode_raw<T: Real>(raw: &[T]) -> Result<DecodedOutputs<T>> {
    if raw.len() < NUM_BETAS || (raw.len() - NUM_BETAS) % 9 != 0 {
        return Err(Error::InvalidArgument(format!("{} raw outputs do not split into 3×3 blocks and β", raw.len())));
    }
    let parts = (raw.len() - NUM_BETAS) / 9;
    let mut rotations = Vec::with_capacity(parts);
    let mut factors = Vec::with_capacity(parts);
    for (part, block) in raw[..parts * 9].chunks_exact(9).enumerate() {
        let (r, f) = project_to_so3_cached(&Mat3::from_row_slice(block))
            .map_err(|e| Error::DegeneratePart { part, source: Box::new(e) })?;
        rotations.push(r);
        factors.push(f);
    }
    Ok(DecodedOutputs {
        rotations: RotationSet(rotations),
        betas: ShapeParams::from_slice(&raw[parts * 9..]),
        factors,
    })
}

/// Mean over examples in the given order.
pub fn batch_mean<T: Real>(values: &[T]) -> T {
    if values.is_empty() {
        return T::zero();
    }
    let mut acc = T::zero();
    for v in values {
        acc += *v;
    }
    acc / T::of_usize(values.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::generate_desk_model;
    use crate::camera::default_camera;
    use crate::gradcheck::grad_check;
    use crate::kinematics::{rodrigues, AxisAngle, RotationMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng, spread: f64) -> PoseParams<f64> {
        PoseParams((0..24).map(|_| AxisAngle::new(rng.random_range(-spread..spread), rng.random_range(-spread..spread), rng.random_range(-spread..spread))).collect())
    }

    fn random_betas(rng: &mut ChaCha8Rng) -> ShapeParams<f64> {
        ShapeParams(std::array::from_fn(|_| rng.random_range(-2.0..2.0)))
    }

    fn targets_for(model: &BodyModel<f64>, cam: &Camera<f64>, pose: &PoseParams<f64>, betas: &ShapeParams<f64>) -> Targets<f64> {
        let rotations = pose.to_rotations();
        let joints = model.pose_joints(&rotations, betas).pose.joints;
        Targets {
            joints_2d: Some(cam.project(&joints).unwrap()),
            joints_3d: Some(joints),
            rotations: Some(rotations),
            betas: Some(*betas),
        }
    }

    #[test]
    fn latent_examples() {
        let rots = RotationSet::<f64>::identity(24);
        let b = ShapeParams::zeros();
        assert_eq!(latent_loss(&rots, &b, &rots, &b).0, 0.0);
        let mut b1 = b;
        b1.0[0] = 1.0;
        assert_eq!(latent_loss(&rots, &b1, &rots, &b).0, 1.0);
        let mut turned = rots.clone();
        turned.0[7] = RotationMatrix::about_axis(Vec3::unit(2), std::f64::consts::FRAC_PI_2);
        assert!((latent_loss(&turned, &b, &rots, &b).0 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn joint_loss_examples() {
        let gt = vec![Vec3::new(1.0f64, 2.0, 3.0); 24];
        assert_eq!(joints_3d_loss(&gt, &gt).0, 0.0);
        let mut p = gt.clone();
        p[5] += Vec3::new(3.0, 4.0, 0.0);
        assert!((joints_3d_loss(&p, &gt).0 - 25.0).abs() < 1e-12);
        let g2 = vec![[10.0f64, 20.0]; 24];
        assert_eq!(joints_2d_loss(&g2, &g2).0, 0.0);
        let mut p2 = g2.clone();
        p2[3] = [13.0, 24.0];
        assert!((joints_2d_loss(&p2, &g2).0 - 25.0).abs() < 1e-12);
    }

    #[test]
    fn joint_losses_match_naive_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let a: Vec<Vec3<f64>> = (0..24).map(|_| Vec3::new(rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0))).collect();
        let b: Vec<Vec3<f64>> = (0..24).map(|_| Vec3::new(rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0))).collect();
        let mut naive = 0.0;
        for k in 0..24 {
            for c in 0..3 {
                naive += (a[k].0[c] - b[k].0[c]) * (a[k].0[c] - b[k].0[c]);
            }
        }
        assert!((joints_3d_loss(&a, &b).0 - naive).abs() < 1e-10 * naive.max(1.0));
        let a2: Vec<[f64; 2]> = a.iter().map(|p| [p.x(), p.y()]).collect();
        let b2: Vec<[f64; 2]> = b.iter().map(|p| [p.x(), p.y()]).collect();
        let naive2: f64 = (0..24).map(|k| (a2[k][0] - b2[k][0]).powi(2) + (a2[k][1] - b2[k][1]).powi(2)).sum();
        assert!((joints_2d_loss(&a2, &b2).0 - naive2).abs() < 1e-10 * naive2.max(1.0));
    }

    #[test]
    fn empty_or_unsupported_mask_is_rejected() {
        let model = generate_desk_model(0, 200).unwrap();
        let cam = default_camera();
        let t = targets_for(&model, &cam, &PoseParams::zeros(24), &ShapeParams::zeros());
        let obj = Objective::new(&model, &cam, AnnotationMask::default(), LossWeights::default());
        assert!(matches!(obj.evaluate_axis_angle(&PoseParams::zeros(24), &ShapeParams::zeros(), &t), Err(Error::EmptyMask)));
        let partial = Targets { joints_3d: None, ..t };
        let obj = Objective::new(&model, &cam, AnnotationMask::ALL, LossWeights::default());
        assert!(obj.evaluate_axis_angle(&PoseParams::zeros(24), &ShapeParams::zeros(), &partial).is_err());
    }

    #[test]
    fn combined_is_weighted_sum_of_terms() {
        let model = generate_desk_model(0, 400).unwrap();
        let cam = default_camera();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let t = targets_for(&model, &cam, &random_pose(&mut rng, 0.5), &random_betas(&mut rng));
        let pose = random_pose(&mut rng, 0.5);
        let betas = random_betas(&mut rng);
        let weights = LossWeights { latent: 2.0, joints_3d: 0.5, joints_2d: 3.0 };
        let single = |mask: AnnotationMask| {
            Objective::new(&model, &cam, mask, weights).evaluate_axis_angle(&pose, &betas, &t).unwrap()
        };
        let all = single(AnnotationMask::ALL);
        let parts = [
            single(AnnotationMask { latent: true, ..Default::default() }),
            single(AnnotationMask { joints_3d: true, ..Default::default() }),
            single(AnnotationMask { joints_2d: true, ..Default::default() }),
        ];
        let sum: f64 = parts.iter().map(|p| p.value).sum();
        assert!((all.value - sum).abs() < 1e-9 * sum);
        for i in 0..72 {
            let s: f64 = parts.iter().map(|p| p.pose[i]).sum();
            assert!((all.pose[i] - s).abs() < 1e-9 * s.abs().max(1.0));
        }
        // re-evaluate the value independently from the posed joints
        let rotations = pose.to_rotations();
        let joints = model.skin(&pose, &betas).joints;
        let px = cam.project(&joints).unwrap();
        let mut lat = 0.0;
        for (p, g) in rotations.0.iter().zip(t.rotations.as_ref().unwrap().0.iter()) {
            lat += (*p.matrix() - *g.matrix()).0.iter().flatten().map(|x| x.abs()).sum::<f64>();
        }
        lat += betas.0.iter().zip(t.betas.unwrap().0.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>();
        let j3: f64 = joints.iter().zip(t.joints_3d.as_ref().unwrap()).map(|(a, b)| (*a - *b).norm_squared()).sum();
        let j2: f64 = px.iter().zip(t.joints_2d.as_ref().unwrap()).map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sum();
        let expected = 2.0 * lat + 0.5 * j3 + 3.0 * j2;
        assert!((all.value - expected).abs() < 1e-9 * expected);
        assert!((all.terms.latent - lat).abs() < 1e-9 * lat);
    }

    #[test]
    fn disabled_terms_have_zero_gradient() {
        let model = generate_desk_model(0, 200).unwrap();
        let cam = default_camera();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let t = targets_for(&model, &cam, &random_pose(&mut rng, 0.5), &random_betas(&mut rng));
        let pose = random_pose(&mut rng, 0.5);
        let betas = t.betas.unwrap();
        // only the latent term is enabled and β matches, so the β gradient is exactly zero
        let obj = Objective::new(&model, &cam, AnnotationMask { latent: true, ..Default::default() }, LossWeights::default());
        let v = obj.evaluate_axis_angle(&pose, &betas, &t).unwrap();
        assert!(v.shape.iter().all(|g| *g == 0.0));
        assert_eq!(v.terms.joints_3d, 0.0);
        assert_eq!(v.terms.joints_2d, 0.0);
        // a zero weight is also a disabled term
        let obj = Objective::new(&model, &cam, AnnotationMask { joints_3d: true, ..Default::default() }, LossWeights { joints_3d: 0.0, ..Default::default() });
        let v = obj.evaluate_axis_angle(&pose, &betas, &t).unwrap();
        assert_eq!(v.value, 0.0);
        assert!(v.pose.iter().chain(&v.shape).all(|g| *g == 0.0));
    }

    #[test]
    fn losses_vanish_at_ground_truth() {
        let model = generate_desk_model(0, 400).unwrap();
        let cam = default_camera();
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let pose = random_pose(&mut rng, 0.7);
        let betas = random_betas(&mut rng);
        let t = targets_for(&model, &cam, &pose, &betas);
        let v = Objective::new(&model, &cam, AnnotationMask::ALL, LossWeights::default())
            .evaluate_axis_angle(&pose, &betas, &t)
            .unwrap();
        assert_eq!(v.value, 0.0);
    }

    fn check_axis_angle(mask: AnnotationMask, seed: u64, tol: f64) {
        let model = generate_desk_model(0, 400).unwrap();
        let cam = default_camera();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obj = Objective::new(&model, &cam, mask, LossWeights::default());
        for _ in 0..20 {
            // targets a moderate distance away keep the loss near fitting scale;
            // with independent poses it reaches ~1e6 mm² and rounding in the
            // differences alone approaches the tolerance
            let pose = random_pose(&mut rng, 0.8);
            let betas = random_betas(&mut rng);
            let near = PoseParams::from_flat(&pose.to_flat().iter().map(|a| a + rng.random_range(-0.3..0.3)).collect::<Vec<_>>());
            let near_b = ShapeParams(betas.0.map(|b| b + rng.random_range(-0.5..0.5)));
            let t = targets_for(&model, &cam, &near, &near_b);
            let point: Vec<f64> = pose.to_flat().into_iter().chain(betas.0).collect();
            let f = |x: &[f64]| {
                let v = obj.evaluate_axis_angle(&PoseParams::from_flat(&x[..72]), &ShapeParams::from_slice(&x[72..]), &t)?;
                Ok((v.value, v.pose.iter().chain(&v.shape).copied().collect()))
            };
            let report = grad_check(f, &point, 1e-5).unwrap();
            assert!(report.max_relative_error < tol, "{mask:?}: {report:?}");
        }
    }

    #[test]
    fn joints_3d_gradient_matches_finite_differences() {
        check_axis_angle(AnnotationMask { joints_3d: true, ..Default::default() }, 35, 1e-5);
    }

    #[test]
    fn joints_2d_gradient_matches_finite_differences() {
        check_axis_angle(AnnotationMask { joints_2d: true, ..Default::default() }, 36, 1e-5);
    }

    #[test]
    fn latent_gradient_matches_away_from_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let gt_r = random_pose(&mut rng, 1.0).to_rotations();
        let gt_b = random_betas(&mut rng);
        let mut checked = 0;
        while checked < 20 {
            let pose = random_pose(&mut rng, 1.0);
            let betas = random_betas(&mut rng);
            let rots = pose.to_rotations();
            // skip points within 1e-3 of a tie in any entry
            let near_tie = rots.0.iter().zip(&gt_r.0).any(|(a, b)| (*a.matrix() - *b.matrix()).0.iter().flatten().any(|d| d.abs() < 1e-3))
                || betas.0.iter().zip(&gt_b.0).any(|(a, b)| (a - b).abs() < 1e-3);
            if near_tie {
                continue;
            }
            checked += 1;
            let point: Vec<f64> = pose.to_flat().into_iter().chain(betas.0).collect();
            let f = |x: &[f64]| {
                let p = PoseParams::from_flat(&x[..72]);
                let (v, g) = latent_loss(&p.to_rotations(), &ShapeParams::from_slice(&x[72..]), &gt_r, &gt_b);
                Ok((v, g.to_axis_angle(&p).into_iter().chain(g.betas).collect()))
            };
            assert!(grad_check(f, &point, 1e-7).unwrap().max_relative_error < 1e-6);
        }
    }

    fn random_raw(rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut raw = Vec::with_capacity(RAW_OUTPUT_DIM);
        for _ in 0..24 {
            let r = rodrigues(&AxisAngle::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let noisy = *r.matrix() + Mat3(std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-0.2..0.2))));
            raw.extend_from_slice(&noisy.to_row_array());
        }
        raw.extend((0..NUM_BETAS).map(|_| rng.random_range(-2.0..2.0)));
        raw
    }

    fn well_separated(raw: &[f64]) -> bool {
        raw[..216].chunks_exact(9).all(|b| {
            let s = crate::kinematics::svd3(&Mat3::from_row_slice(b)).sigma;
            s[0] - s[1] > 1e-3 && s[1] - s[2] > 1e-3 && s[2] > 1e-3
        })
    }

    #[test]
    fn raw_output_gradient_through_projection() {
        let model = generate_desk_model(0, 400).unwrap();
        let cam = default_camera();
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let mut checked = 0;
        while checked < 5 {
            let raw = random_raw(&mut rng);
            if !well_separated(&raw) {
                continue;
            }
            checked += 1;
            let t = targets_for(&model, &cam, &random_pose(&mut rng, 0.8), &random_betas(&mut rng));
            for mask in [AnnotationMask { joints_3d: true, ..Default::default() }, AnnotationMask { joints_2d: true, ..Default::default() }] {
                let obj = Objective::new(&model, &cam, mask, LossWeights::default());
                let f = |x: &[f64]| {
                    let v = obj.evaluate_raw(x, &t)?;
                    Ok((v.value, v.raw.unwrap()))
                };
                let r = grad_check(f, &raw, 1e-5).unwrap();
                assert!(r.max_relative_error < 1e-5, "{mask:?} {r:?}");
            }
        }
    }

    #[test]
    fn latent_through_projection_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(39);
        let gt = random_pose(&mut rng, 1.0).to_rotations();
        let gt_b = random_betas(&mut rng);
        let mut checked = 0;
        while checked < 5 {
            let raw = random_raw(&mut rng);
            if !well_separated(&raw) {
                continue;
            }
            let dec = decode_raw(&raw).unwrap();
            let near_tie = dec.rotations.0.iter().zip(&gt.0).any(|(a, b)| (*a.matrix() - *b.matrix()).0.iter().flatten().any(|d| d.abs() < 1e-3));
            if near_tie {
                continue;
            }
            checked += 1;
            let f = |x: &[f64]| {
                let d = decode_raw(x)?;
                let (v, g) = latent_loss(&d.rotations, &d.betas, &gt, &gt_b);
                Ok((v, d.backward(&g)))
            };
            assert!(grad_check(f, &raw, 1e-6).unwrap().max_relative_error < 1e-4);
        }
    }

    #[test]
    fn depth_along_ray_leaves_2d_loss_flat() {
        let cam = default_camera::<f64>();
        let p = vec![Vec3::new(120.0, -340.0, 50.0)];
        let gt = vec![[300.0, 180.0]];
        let (_, g) = joints_2d_loss(&cam.project(&p).unwrap(), &gt);
        let d3 = cam.project_backward(&p, &g).unwrap()[0];
        // direction from the camera centre through p
        let ray = Vec3::new(p[0].x(), p[0].y(), p[0].z() + cam.distance).normalized();
        assert!(d3.dot(&ray).abs() < 1e-9 * d3.norm());
    }

    #[test]
    fn decode_reports_degenerate_part() {
        let mut raw = vec![0.0; RAW_OUTPUT_DIM];
        for b in 0..24 {
            raw[b * 9] = 1.0;
            raw[b * 9 + 4] = 1.0;
            raw[b * 9 + 8] = 1.0;
        }
        assert!(decode_raw(&raw).is_ok());
        raw[3 * 9..4 * 9].fill(0.0);
        assert!(matches!(decode_raw(&raw), Err(Error::DegeneratePart { part: 3, .. })));
    }

    #[test]
    fn batch_mean_is_plain_average() {
        assert_eq!(batch_mean::<f64>(&[]), 0.0);
        assert_eq!(batch_mean(&[1.0, 2.0, 6.0]), 3.0);
    }
}
