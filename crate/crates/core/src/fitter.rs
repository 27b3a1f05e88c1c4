//! Direct optimisation of pose and shape against observed annotations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body_model::{BodyModel, PoseParams, RotationSet, ShapeParams, NUM_BETAS};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::kinematics::rotation_to_axis_angle;
use crate::linalg::Vec3;
use crate::losses::{AnnotationMask, LossWeights, Objective, Targets};
use crate::metrics::{evaluate_example, ExampleMetrics, MetricsReport};
use crate::optim::{Adam, AdamConfig, Schedule};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InitMode {
    /// Rest pose and mean shape.
    #[default]
    Zero,
    /// Ground-truth θ and β plus independent N(0, σ²) noise on every value.
    PerturbedGroundTruth { sigma: f64 },
    /// A caller-supplied starting point.
    Provided,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub max_iterations: usize,
    pub adam: AdamConfig,
    pub schedule: Schedule,
    /// Stop once successive losses differ by less than this.
    pub tolerance: f64,
    pub init: InitMode,
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iterations: 500,
            adam: AdamConfig { learning_rate: 0.01, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 },
            schedule: Schedule::Linear { final_fraction: 0.05 },
            tolerance: 1e-6,
            init: InitMode::Zero,
            seed: 0,
            weights: LossWeights::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be positive".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        if let InitMode::PerturbedGroundTruth { sigma } = self.init {
            if !(sigma >= 0.0) {
                return Err(Error::InvalidArgument("perturbation sigma must be non-negative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub pose: PoseParams<f64>,
    pub betas: ShapeParams<f64>,
    /// Loss at every evaluated iterate, starting with the initial point.
    pub loss_trace: Vec<f64>,
    pub converged: bool,
    /// Number of parameter updates taken.
    pub iterations: usize,
}

impl FitResult {
    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().expect("trace holds the initial loss")
    }
}

fn starting_point(
    targets: &Targets<f64>,
    config: &FitConfig,
    provided: Option<&(PoseParams<f64>, ShapeParams<f64>)>,
    parts: usize,
) -> Result<Vec<f64>> {
    let (pose, betas) = match config.init {
        InitMode::Zero => (PoseParams::zeros(parts), ShapeParams::zeros()),
        InitMode::Provided => {
            provided.cloned().ok_or_else(|| Error::InvalidArgument("provided init mode needs a starting point".into()))?
        }
        InitMode::PerturbedGroundTruth { sigma } => {
            let (Some(rots), Some(betas)) = (&targets.rotations, &targets.betas) else {
                return Err(Error::InvalidArgument("perturbed init needs ground-truth rotations and shape".into()));
            };
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let pose = PoseParams(
                rots.0.iter().map(|r| crate::kinematics::AxisAngle(rotation_to_axis_angle(r).0.map(|a| a + noise.sample(&mut rng)))).collect(),
            );
            let betas = ShapeParams(betas.0.map(|b| b + noise.sample(&mut rng)));
            (pose, betas)
        }
    };
    if pose.len() != parts {
        return Err(Error::InvalidArgument(format!("starting pose has {} parts, model has {parts}", pose.len())));
    }
    Ok(pose.to_flat().into_iter().chain(betas.0).collect())
}

/// Adam over the axis-angle pose and β until the loss change drops below
/// the tolerance or the iteration budget runs out.
pub fn fit(
    model: &BodyModel<f64>,
    camera: &Camera<f64>,
    targets: &Targets<f64>,
    mask: AnnotationMask,
    config: &FitConfig,
    provided: Option<&(PoseParams<f64>, ShapeParams<f64>)>,
) -> Result<FitResult> {
    config.validate()?;
    let parts = model.num_parts();
    let pose_len = 3 * parts;
    let objective = Objective::new(model, camera, mask, config.weights);
    let mut params = starting_point(targets, config, provided, parts)?;
    let mut adam = Adam::new(params.len(), config.adam);
    let mut trace = Vec::with_capacity(config.max_iterations + 1);
    let mut converged = false;

    for iteration in 0..=config.max_iterations {
        let value = objective.evaluate_axis_angle(
            &PoseParams::from_flat(&params[..pose_len]),
            &ShapeParams::from_slice(&params[pose_len..]),
            targets,
        )?;
        if !value.value.is_finite() || value.pose.iter().chain(&value.shape).any(|g| !g.is_finite()) {
            return Err(Error::Diverged { iteration });
        }
        if let Some(previous) = trace.last() {
            if (value.value - previous).abs() < config.tolerance {
                trace.push(value.value);
                converged = true;
                break;
            }
        }
        trace.push(value.value);
        if iteration == config.max_iterations {
            break;
        }
        let grad: Vec<f64> = value.pose.iter().chain(&value.shape).copied().collect();
        adam.step(&mut params, &grad, config.schedule.factor(iteration, config.max_iterations));
    }

    Ok(FitResult {
        pose: PoseParams::from_flat(&params[..pose_len]),
        betas: ShapeParams::from_slice(&params[pose_len..pose_len + NUM_BETAS]),
        loss_trace: trace,
        converged,
        iterations: adam.steps(),
    })
}

/// One example for [`fit_batch`]. `truth` enables the metrics row.
#[derive(Clone, Debug)]
pub struct FitItem {
    pub targets: Targets<f64>,
    pub mask: AnnotationMask,
    pub truth: Option<(RotationSet<f64>, Vec<Vec3<f64>>)>,
    pub init: Option<(PoseParams<f64>, ShapeParams<f64>)>,
}

#[derive(Debug)]
pub struct BatchFit {
    pub results: Vec<Result<FitResult>>,
    /// Rows for the examples that fitted and carry ground truth, in input order.
    pub report: MetricsReport,
}

/// Fits every item independently (in parallel) and reports metrics.
/// Per-example errors are kept in `results` and do not stop the batch.
/// Each item uses `config.seed + index` for its perturbation draw.
pub fn fit_batch(model: &BodyModel<f64>, camera: &Camera<f64>, items: &[FitItem], config: &FitConfig) -> BatchFit {
    let results: Vec<(Result<FitResult>, Option<ExampleMetrics>)> = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let cfg = FitConfig { seed: config.seed.wrapping_add(i as u64), ..*config };
            let fitted = fit(model, camera, &item.targets, item.mask, &cfg, item.init.as_ref());
            let row = match (&fitted, &item.truth) {
                (Ok(r), Some((gt_rots, gt_joints))) => {
                    let rots = r.pose.to_rotations();
                    let joints = model.pose_joints(&rots, &r.betas).pose.joints;
                    evaluate_example(camera, &joints, &rots, gt_joints, gt_rots).ok()
                }
                _ => None,
            };
            (fitted, row)
        })
        .collect();
    let rows = results.iter().filter_map(|(_, m)| *m).collect();
    BatchFit { results: results.into_iter().map(|(r, _)| r).collect(), report: MetricsReport::new(rows) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::generate_desk_model;
    use crate::camera::default_camera;
    use crate::kinematics::AxisAngle;
    use crate::metrics::e_joints;
    use rand::{Rng, SeedableRng};

    fn sample(seed: u64) -> (PoseParams<f64>, ShapeParams<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = PoseParams((0..24).map(|_| AxisAngle::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4))).collect());
        (pose, ShapeParams(std::array::from_fn(|_| rng.random_range(-1.0..1.0))))
    }

    fn targets(model: &BodyModel<f64>, cam: &Camera<f64>, pose: &PoseParams<f64>, betas: &ShapeParams<f64>) -> Targets<f64> {
        let rotations = pose.to_rotations();
        let joints = model.pose_joints(&rotations, betas).pose.joints;
        Targets { joints_2d: Some(cam.project(&joints).unwrap()), joints_3d: Some(joints), rotations: Some(rotations), betas: Some(*betas) }
    }

    const ONLY_3D: AnnotationMask = AnnotationMask { latent: false, joints_3d: true, joints_2d: false };

    #[test]
    fn ground_truth_is_a_fixed_point() {
        let model = generate_desk_model(0, 300).unwrap();
        let cam = default_camera();
        let (pose, betas) = sample(1);
        let t = targets(&model, &cam, &pose, &betas);
        let cfg = FitConfig { init: InitMode::Provided, ..Default::default() };
        let r = fit(&model, &cam, &t, AnnotationMask::ALL, &cfg, Some(&(pose, betas))).unwrap();
        assert!(r.converged && r.iterations <= 2, "{} iterations", r.iterations);
        assert!(r.final_loss() < 1e-12);
    }

    #[test]
    fn recovers_joints_from_perturbed_start() {
        let model = generate_desk_model(0, 400).unwrap();
        let cam = default_camera();
        let (pose, betas) = sample(2);
        let t = targets(&model, &cam, &pose, &betas);
        let cfg = FitConfig { init: InitMode::PerturbedGroundTruth { sigma: 0.1 }, seed: 9, ..Default::default() };
        let r = fit(&model, &cam, &t, ONLY_3D, &cfg, None).unwrap();
        let joints = model.pose_joints(&r.pose.to_rotations(), &r.betas).pose.joints;
        let err = e_joints(&joints, t.joints_3d.as_ref().unwrap());
        assert!(err < 5.0, "MPJPE {err}");
        assert!(r.final_loss() < r.loss_trace[0]);
        // windowed monotone trend
        let medians: Vec<f64> = r.loss_trace.chunks(50).map(|w| {
            let mut w = w.to_vec();
            w.sort_by(f64::total_cmp);
            w[w.len() / 2]
        }).collect();
        assert!(medians.windows(2).all(|m| m[1] <= m[0]), "{medians:?}");
    }

    #[test]
    fn two_d_only_fits_pixels_but_not_rotations() {
        let model = generate_desk_model(0, 400).unwrap();
        let cam = default_camera();
        let (pose, betas) = sample(3);
        let t = targets(&model, &cam, &pose, &betas);
        let cfg = FitConfig { max_iterations: 1500, ..Default::default() };
        let r = fit(&model, &cam, &t, AnnotationMask::ONLY_2D, &cfg, None).unwrap();
        let rots = r.pose.to_rotations();
        let px = cam.project(&model.pose_joints(&rots, &r.betas).pose.joints).unwrap();
        let gt_px = t.joints_2d.as_ref().unwrap();
        let rms = (px.iter().zip(gt_px).map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sum::<f64>() / 24.0).sqrt();
        assert!(rms < 2.0, "2D residual {rms}");
        let eq = crate::metrics::e_quat(&rots, t.rotations.as_ref().unwrap());
        assert!(eq > 0.05, "rotations recovered too well for 2D-only: {eq}");
    }

    #[test]
    fn shifting_observations_with_principal_point_changes_nothing() {
        let model = generate_desk_model(0, 300).unwrap();
        let cam = default_camera();
        let (pose, betas) = sample(4);
        let t = targets(&model, &cam, &pose, &betas);
        let shifted_cam = Camera { cx: cam.cx + 12.0, cy: cam.cy - 7.0, ..cam };
        let mut shifted = t.clone();
        shifted.joints_2d = Some(t.joints_2d.as_ref().unwrap().iter().map(|p| [p[0] + 12.0, p[1] - 7.0]).collect());
        let cfg = FitConfig { max_iterations: 100, ..Default::default() };
        let a = fit(&model, &cam, &t, AnnotationMask::ONLY_2D, &cfg, None).unwrap();
        let b = fit(&model, &shifted_cam, &shifted, AnnotationMask::ONLY_2D, &cfg, None).unwrap();
        for (x, y) in a.pose.to_flat().iter().zip(b.pose.to_flat()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let model = generate_desk_model(0, 300).unwrap();
        let cam = default_camera();
        let (pose, betas) = sample(5);
        let mut t = targets(&model, &cam, &pose, &betas);
        t.joints_3d.as_mut().unwrap()[3] = Vec3::new(f64::NAN, 0.0, 0.0);
        let err = fit(&model, &cam, &t, ONLY_3D, &FitConfig::default(), None).unwrap_err();
        assert!(matches!(err, Error::Diverged { iteration: 0 }));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let model = generate_desk_model(0, 300).unwrap();
        let cam = default_camera();
        let (pose, betas) = sample(6);
        let t = targets(&model, &cam, &pose, &betas);
        for cfg in [
            FitConfig { max_iterations: 0, ..Default::default() },
            FitConfig { tolerance: 0.0, ..Default::default() },
            FitConfig { init: InitMode::Provided, ..Default::default() },
        ] {
            assert!(fit(&model, &cam, &t, ONLY_3D, &cfg, None).is_err());
        }
    }

    #[test]
    fn batch_keeps_order_and_is_deterministic() {
        let model = generate_desk_model(0, 300).unwrap();
        let cam = default_camera();
        assert!(fit_batch(&model, &cam, &[], &FitConfig::default()).report.is_empty());
        let items: Vec<FitItem> = (0..4)
            .map(|s| {
                let (pose, betas) = sample(10 + s);
                let t = targets(&model, &cam, &pose, &betas);
                FitItem { truth: Some((t.rotations.clone().unwrap(), t.joints_3d.clone().unwrap())), targets: t, mask: ONLY_3D, init: None }
            })
            .collect();
        let cfg = FitConfig { max_iterations: 60, init: InitMode::PerturbedGroundTruth { sigma: 0.1 }, ..Default::default() };
        let a = fit_batch(&model, &cam, &items, &cfg);
        let b = fit_batch(&model, &cam, &items, &cfg);
        assert_eq!(a.report, b.report);
        assert_eq!(a.report.count, 4);
        for (i, (x, y)) in a.results.iter().zip(&b.results).enumerate() {
            let (x, y) = (x.as_ref().unwrap(), y.as_ref().unwrap());
            assert_eq!(x, y);
            let single = fit(&model, &cam, &items[i].targets, ONLY_3D, &FitConfig { seed: cfg.seed + i as u64, ..cfg }, None).unwrap();
            assert_eq!(&single, x);
        }
    }

    #[test]
    fn batch_survives_failing_items() {
        let model = generate_desk_model(0, 300).unwrap();
        let cam = default_camera();
        let (pose, betas) = sample(20);
        let good = targets(&model, &cam, &pose, &betas);
        let mut bad = good.clone();
        bad.joints_3d = None;
        let items = vec![
            FitItem { targets: bad, mask: ONLY_3D, truth: None, init: None },
            FitItem { truth: Some((good.rotations.clone().unwrap(), good.joints_3d.clone().unwrap())), targets: good, mask: ONLY_3D, init: None },
        ];
        let out = fit_batch(&model, &cam, &items, &FitConfig { max_iterations: 20, ..Default::default() });
        assert!(out.results[0].is_err() && out.results[1].is_ok());
        assert_eq!(out.report.count, 1);
    }
}
