use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::{corrupt, PartSegGrid, PALETTE};
use super::{mirror_betas, mirror_pixels, mirror_points, mirror_pose, rasterize, sample_pose_shape, DEFAULT_GRID_SIZE, MIN_GRID_SIZE};
use crate::body_model::{generate_desk_model, model_hash, BodyModel, PoseParams, ShapeParams};
use crate::camera::{default_camera, Camera, Point2};
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::losses::{AnnotationMask, Targets};
use crate::manifest::{sha256_hex, RunManifest};

pub const DATASET_FORMAT: &str = "bodyfit-dataset";
pub const GENERATOR_VERSION: u32 = 1;

/// Everything that determines a generated dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub model_seed: u64,
    pub vertices: usize,
    pub examples: usize,
    pub seed: u64,
    pub difficulty: f64,
    pub grid_size: usize,
    pub granularity: usize,
    pub corruption: f64,
    /// Share of examples carrying latent and 3D labels; all carry 2D joints.
    pub labelled_fraction: f64,
    /// Append a left/right mirrored copy of every example.
    pub mirror: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            model_seed: 0,
            vertices: 1000,
            examples: 100,
            seed: 0,
            difficulty: 0.5,
            grid_size: DEFAULT_GRID_SIZE,
            granularity: 12,
            corruption: 0.0,
            labelled_fraction: 1.0,
            mirror: false,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.examples == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one example".into()));
        }
        if self.grid_size < MIN_GRID_SIZE {
            return Err(Error::InvalidArgument(format!("grid size {} below {MIN_GRID_SIZE}", self.grid_size)));
        }
        super::GranularityMap::new(self.granularity)?;
        if !unit(self.difficulty) || !unit(self.corruption) || !unit(self.labelled_fraction) {
            return Err(Error::InvalidArgument("difficulty, corruption and labelled fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// The body model this dataset is rendered from.
    pub fn model(&self) -> Result<BodyModel<f64>> {
        generate_desk_model(self.model_seed, self.vertices)
    }
}

/// Marks `round(fraction·n)` examples, chosen by a seeded shuffle, as fully
/// labelled; the rest get 2D joints only.
pub fn assign_masks(n: usize, fraction: f64, seed: u64) -> Result<Vec<AnnotationMask>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("labelled fraction {fraction} outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let full = (fraction * n as f64).round() as usize;
    let mut masks = vec![AnnotationMask::ONLY_2D; n];
    for &i in &order[..full] {
        masks[i] = AnnotationMask::ALL;
    }
    Ok(masks)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedExample {
    pub index: usize,
    pub seed: u64,
    pub grid: PartSegGrid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<PoseParams<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<ShapeParams<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints_3d: Option<Vec<Vec3<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints_2d: Option<Vec<Point2<f64>>>,
    pub mask: AnnotationMask,
    /// F1 of the grid against its clean rendering.
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mirror_of: Option<usize>,
}

impl AnnotatedExample {
    pub fn targets(&self) -> Targets<f64> {
        Targets {
            rotations: self.pose.as_ref().map(|p| p.to_rotations()),
            betas: self.betas,
            joints_3d: self.joints_3d.clone(),
            joints_2d: self.joints_2d.clone(),
        }
    }

    /// Mask agrees with the fields present, and stored pixels are the
    /// projection of stored 3D joints.
    pub fn validate(&self, camera: &Camera<f64>) -> Result<()> {
        let present = AnnotationMask {
            latent: self.pose.is_some() && self.betas.is_some(),
            joints_3d: self.joints_3d.is_some(),
            joints_2d: self.joints_2d.is_some(),
        };
        if present != self.mask || self.pose.is_some() != self.betas.is_some() {
            return Err(Error::Format(format!("example {}: mask {:?} disagrees with the fields present", self.index, self.mask)));
        }
        if self.mask.is_empty() {
            return Err(Error::Format(format!("example {} carries no annotation", self.index)));
        }
        if let (Some(j3), Some(j2)) = (&self.joints_3d, &self.joints_2d) {
            let projected = camera.project(j3)?;
            if projected.len() != j2.len() || projected.iter().zip(j2).any(|(a, b)| (a[0] - b[0]).abs() > 1e-6 || (a[1] - b[1]).abs() > 1e-6) {
                return Err(Error::Format(format!("example {}: 2D joints are not the projection of the 3D joints", self.index)));
            }
        }
        Ok(())
    }
}

/// First line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub generator_version: u32,
    pub manifest: RunManifest,
    pub spec: DatasetSpec,
    pub model_hash: String,
    pub camera: Camera<f64>,
    pub palette: Vec<[u8; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub examples: Vec<AnnotatedExample>,
}

struct Rendered {
    seed: u64,
    pose: PoseParams<f64>,
    betas: ShapeParams<f64>,
    joints_3d: Vec<Vec3<f64>>,
    joints_2d: Vec<Point2<f64>>,
    grid: PartSegGrid,
    f1: f64,
}

fn labelled(index: usize, r: &Rendered, mask: AnnotationMask, mirror_of: Option<usize>) -> AnnotatedExample {
    AnnotatedExample {
        index,
        seed: r.seed,
        grid: r.grid.clone(),
        pose: mask.latent.then(|| r.pose.clone()),
        betas: mask.latent.then_some(r.betas),
        joints_3d: mask.joints_3d.then(|| r.joints_3d.clone()),
        joints_2d: mask.joints_2d.then(|| r.joints_2d.clone()),
        mask,
        f1: r.f1,
        mirror_of,
    }
}

/// Samples, renders and labels `spec.examples` examples (in parallel,
/// stored in index order), then the mirrored copies if enabled.
pub fn build_dataset(spec: &DatasetSpec, model: &BodyModel<f64>, camera: &Camera<f64>, manifest: RunManifest) -> Result<Dataset> {
    spec.validate()?;
    camera.validate()?;
    if spec.mirror && camera.cx * 2.0 != camera.width as f64 {
        return Err(Error::InvalidArgument("mirroring needs the principal point on the image's centre column".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let seeds: Vec<(u64, u64)> = (0..spec.examples).map(|_| (master.next_u64(), master.next_u64())).collect();
    let masks = assign_masks(spec.examples, spec.labelled_fraction, spec.seed)?;

    let rendered: Vec<Rendered> = seeds
        .par_iter()
        .map(|&(seed, noise_seed)| {
            let (pose, betas) = sample_pose_shape(seed, spec.difficulty)?;
            let rotations = pose.to_rotations();
            let joints_3d = model.pose_joints(&rotations, &betas).pose.joints;
            let joints_2d = camera.project(&joints_3d)?;
            let clean = rasterize(model, camera, &rotations, &betas, spec.grid_size, spec.granularity)?;
            let (grid, f1) = if spec.corruption > 0.0 { corrupt(&clean, spec.corruption, noise_seed)? } else { (clean, 1.0) };
            Ok(Rendered { seed, pose, betas, joints_3d, joints_2d, grid, f1 })
        })
        .collect::<Result<_>>()?;

    let mut examples: Vec<AnnotatedExample> = rendered.iter().zip(&masks).enumerate().map(|(i, (r, &m))| labelled(i, r, m, None)).collect();
    if spec.mirror {
        for (i, (r, &m)) in rendered.iter().zip(&masks).enumerate() {
            let mirrored = Rendered {
                seed: r.seed,
                pose: mirror_pose(&r.pose),
                betas: mirror_betas(&r.betas),
                joints_3d: mirror_points(&r.joints_3d),
                joints_2d: camera.project(&mirror_points(&r.joints_3d))?,
                grid: r.grid.mirrored(),
                f1: r.f1,
            };
            debug_assert!(mirror_pixels(camera, &r.joints_2d).iter().zip(&mirrored.joints_2d).all(|(a, b)| (a[0] - b[0]).abs() < 1e-6));
            examples.push(labelled(spec.examples + i, &mirrored, m, Some(i)));
        }
    }

    Ok(Dataset {
        header: DatasetHeader {
            format: DATASET_FORMAT.to_string(),
            generator_version: GENERATOR_VERSION,
            manifest,
            spec: *spec,
            model_hash: model_hash(model),
            camera: *camera,
            palette: PALETTE.to_vec(),
        },
        examples,
    })
}

impl Dataset {
    /// Generates a dataset with the default camera and the spec's model.
    pub fn generate(spec: &DatasetSpec, manifest: RunManifest) -> Result<Self> {
        let model = spec.model()?;
        build_dataset(spec, &model, &default_camera(), manifest)
    }

    /// JSON lines: the header, then one example per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for e in &self.examples {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        buf
    }

    pub fn hash(&self) -> String {
        sha256_hex(&self.to_bytes())
    }

    /// Parses and validates a dataset file.
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let first = lines.next().ok_or_else(|| Error::Format("empty dataset file".into()))??;
        let header: DatasetHeader = serde_json::from_str(&first)?;
        if header.format != DATASET_FORMAT {
            return Err(Error::Format(format!("not a dataset file (format {:?})", header.format)));
        }
        if header.generator_version != GENERATOR_VERSION {
            return Err(Error::Format(format!("unsupported generator version {}", header.generator_version)));
        }
        header.camera.validate()?;
        let mut examples = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: AnnotatedExample = serde_json::from_str(&line)?;
            if e.grid.size() != header.spec.grid_size || e.grid.granularity() != header.spec.granularity {
                return Err(Error::Format(format!("example {} grid does not match the header", e.index)));
            }
            e.validate(&header.camera)?;
            examples.push(e);
        }
        Ok(Dataset { header, examples })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Regenerates the body model and checks it against the recorded hash.
    pub fn model(&self) -> Result<BodyModel<f64>> {
        let model = self.header.spec.model()?;
        let hash = model_hash(&model);
        if hash != self.header.model_hash {
            return Err(Error::Format(format!("model hash {hash} does not match the dataset's {}", self.header.model_hash)));
        }
        Ok(model)
    }
}
