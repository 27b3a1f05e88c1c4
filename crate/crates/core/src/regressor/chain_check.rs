use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use super::{RegressorNet, TrainConfig};
use crate::body_model::{generate_desk_model, BodyModel, ModelGrad, RotationSet, ShapeParams};
use crate::camera::{default_camera, Camera, Point2};
use crate::error::Result;
use crate::gradcheck::{grad_check, GradCheckReport};
use crate::linalg::Vec3;
use crate::losses::{AnnotationMask, Objective, Targets, RAW_OUTPUT_DIM};
use crate::synth::{rasterize, sample_pose_shape, PartSegGrid};

/// Loss checked end to end through the micro-net.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ChainTerm {
    #[serde(rename = "latent")]
    Latent,
    #[serde(rename = "joints_3d")]
    Joints3d,
    #[serde(rename = "joints_2d")]
    Joints2d,
    #[serde(rename = "joints_2d+3d")]
    Joints2d3d,
    /// Reprojection of every skinned vertex, covering pose blendshapes and skinning.
    #[serde(rename = "mesh_2d")]
    Mesh2d,
}

impl ChainTerm {
    pub const ALL: [ChainTerm; 5] = [ChainTerm::Latent, ChainTerm::Joints3d, ChainTerm::Joints2d, ChainTerm::Joints2d3d, ChainTerm::Mesh2d];

    pub fn name(&self) -> &'static str {
        match self {
            ChainTerm::Latent => "latent",
            ChainTerm::Joints3d => "joints_3d",
            ChainTerm::Joints2d => "joints_2d",
            ChainTerm::Joints2d3d => "joints_2d+3d",
            ChainTerm::Mesh2d => "mesh_2d",
        }
    }

    fn mask(&self) -> Option<AnnotationMask> {
        let m = |latent, joints_3d, joints_2d| Some(AnnotationMask { latent, joints_3d, joints_2d });
        match self {
            ChainTerm::Latent => m(true, false, false),
            ChainTerm::Joints3d => m(false, true, false),
            ChainTerm::Joints2d => m(false, false, true),
            ChainTerm::Joints2d3d => m(false, true, true),
            ChainTerm::Mesh2d => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChainCheck {
    pub configuration: usize,
    pub term: ChainTerm,
    pub report: GradCheckReport,
}

const MICRO_GRID: usize = 16;
const MICRO_GRANULARITY: usize = 3;
const MICRO_HIDDEN: usize = 2;
/// Vertex count of the body model the chain check generates from its seed.
pub const CHAIN_MODEL_VERTICES: usize = 200;
const MESH_WEIGHT: f64 = 1e-3;

struct Case {
    grid: PartSegGrid,
    net: RegressorNet<f64>,
    targets: Targets<f64>,
    vertex_pixels: Vec<Point2<f64>>,
}

fn make_case(model: &BodyModel<f64>, camera: &Camera<f64>, seed: u64, configuration: usize) -> Result<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(configuration as u64);
    let mut draw = || rand::RngCore::next_u64(&mut rng);
    let (input_pose, input_betas) = sample_pose_shape(draw(), 0.5)?;
    let grid = rasterize(model, camera, &input_pose.to_rotations(), &input_betas, MICRO_GRID, MICRO_GRANULARITY)?;

    let mut net = RegressorNet::new(MICRO_GRID, MICRO_GRANULARITY, &[MICRO_HIDDEN], draw())?;
    // move the raw blocks away from exact identities so the SVD sees generic matrices
    let mut noise_rng = ChaCha8Rng::seed_from_u64(draw());
    let noise = Normal::new(0.0, 0.2).expect("positive std");
    let (_, bias) = net.layer_ranges(net.num_layers() - 1);
    for p in &mut net.params_mut()[bias] {
        *p += noise.sample(&mut noise_rng);
    }

    let (pose, betas) = sample_pose_shape(draw(), 0.5)?;
    let rotations = pose.to_rotations();
    let joints = model.pose_joints(&rotations, &betas).pose.joints;
    let vertices = model.skin_rotations(&rotations, &betas).vertices;
    Ok(Case {
        grid,
        net,
        targets: Targets { joints_2d: Some(camera.project(&joints)?), joints_3d: Some(joints), rotations: Some(rotations), betas: Some(betas) },
        vertex_pixels: camera.project(&vertices)?,
    })
}

fn mesh_loss(
    model: &BodyModel<f64>,
    camera: &Camera<f64>,
    rotations: &RotationSet<f64>,
    betas: &ShapeParams<f64>,
    target: &[Point2<f64>],
) -> Result<(f64, ModelGrad<f64>)> {
    let state = model.skin_forward(rotations, betas);
    let pixels = camera.project(&state.vertices)?;
    let mut value = 0.0;
    let d_pixels: Vec<Point2<f64>> = pixels
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let (du, dv) = (p[0] - t[0], p[1] - t[1]);
            value += MESH_WEIGHT * (du * du + dv * dv);
            [2.0 * MESH_WEIGHT * du, 2.0 * MESH_WEIGHT * dv]
        })
        .collect();
    let d_vertices = camera.project_backward(&state.vertices, &d_pixels)?;
    let grad = model.skin_backward(&state, &d_vertices, &vec![Vec3::zero(); model.num_parts()]);
    Ok((value, grad))
}

/// Loss of `term` and its gradient with respect to every net parameter.
fn chain_loss(model: &BodyModel<f64>, camera: &Camera<f64>, case: &Case, term: ChainTerm, params: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut net = case.net.clone();
    net.params_mut().copy_from_slice(params);
    let (fwd, decoded) = net.decode(&case.grid)?;
    let (value, model_grad) = match term.mask() {
        Some(mask) => {
            let objective = Objective::new(model, camera, mask, TrainConfig::default().weights);
            let (v, _, g) = objective.evaluate_rotations(&decoded.rotations, &decoded.betas, &case.targets)?;
            (v, g)
        }
        None => mesh_loss(model, camera, &decoded.rotations, &decoded.betas, &case.vertex_pixels)?,
    };
    let d_raw = decoded.backward(&model_grad);
    debug_assert_eq!(d_raw.len(), RAW_OUTPUT_DIM);
    let mut grad = vec![0.0; params.len()];
    net.backward(&fwd, &d_raw, &mut grad);
    Ok((value, grad))
}

/// Finite-difference check of every loss term through the whole chain
/// (net → SVD projection → blendshapes → joints or skinning → projection)
/// on `configurations` seeded micro-nets with two hidden units.
pub fn chain_gradcheck(seed: u64, configurations: usize, step: f64) -> Result<Vec<ChainCheck>> {
    let model = generate_desk_model(seed, CHAIN_MODEL_VERTICES)?;
    let camera = default_camera();
    let per_config: Vec<Vec<ChainCheck>> = (0..configurations)
        .into_par_iter()
        .map(|c| {
            let case = make_case(&model, &camera, seed, c)?;
            ChainTerm::ALL
                .iter()
                .map(|&term| {
                    let report = grad_check(|p| chain_loss(&model, &camera, &case, term, p), case.net.params(), step)?;
                    Ok(ChainCheck { configuration: c, term, report })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(per_config.into_iter().flatten().collect())
}
