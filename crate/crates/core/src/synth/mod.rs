//! Synthetic training data: pose sampling, segmentation rendering by point
//! splatting, mirroring and dataset files.

mod dataset;
mod grid;

pub use dataset::*;
pub use grid::*;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::body_model::{BodyModel, PoseParams, RotationSet, ShapeParams};
use crate::camera::{Camera, Point2};
use crate::error::{Error, Result};
use crate::kinematics::{AxisAngle, MIRROR_PARTNER, NUM_JOINTS};
use crate::linalg::Vec3;

/// Smallest grid accepted by [`rasterize`].
pub const MIN_GRID_SIZE: usize = 16;
pub const DEFAULT_GRID_SIZE: usize = 32;

type AxisBox = [[f64; 3]; 2];

/// Axis-angle limits `[lower, upper]` at difficulty 1 for the midline and
/// left-side parts. Right-side limits are their mirror images.
fn left_box(part: usize) -> AxisBox {
    let b = |x: [f64; 2], y: [f64; 2], z: [f64; 2]| [[x[0], y[0], z[0]], [x[1], y[1], z[1]]];
    match part {
        0 => b([-0.3, 0.3], [-0.8, 0.8], [-0.2, 0.2]),
        3 | 6 => b([-0.2, 0.4], [-0.3, 0.3], [-0.2, 0.2]),
        9 => b([-0.15, 0.3], [-0.2, 0.2], [-0.15, 0.15]),
        12 | 15 => b([-0.3, 0.3], [-0.4, 0.4], [-0.2, 0.2]),
        // hip flexion brings the leg towards the camera (-x rotation)
        1 => b([-1.2, 0.3], [-0.3, 0.3], [-0.5, 0.15]),
        4 => b([0.0, 1.5], [-0.1, 0.1], [-0.1, 0.1]),
        7 => b([-0.4, 0.4], [-0.2, 0.2], [-0.2, 0.2]),
        10 => b([-0.2, 0.2], [-0.1, 0.1], [-0.1, 0.1]),
        13 => b([-0.1, 0.1], [-0.15, 0.15], [-0.2, 0.2]),
        // arms rest horizontally; +z lowers the left arm, +y swings it forward
        16 => b([-0.5, 0.5], [-0.5, 1.0], [-0.5, 1.2]),
        18 => b([-0.5, 0.5], [0.0, 1.8], [-0.2, 0.2]),
        20 => b([-0.3, 0.3], [-0.3, 0.3], [-0.3, 0.3]),
        22 => b([-0.2, 0.2], [-0.2, 0.2], [-0.2, 0.2]),
        _ => unreachable!("right-side part"),
    }
}

/// Sampling limits of one part at difficulty 1.
pub fn pose_box(part: usize) -> AxisBox {
    let partner = MIRROR_PARTNER[part];
    if partner == part || matches!(part, 1 | 4 | 7 | 10 | 13 | 16 | 18 | 20 | 22) {
        return left_box(part);
    }
    let [lo, hi] = left_box(partner);
    [[lo[0], -hi[1], -hi[2]], [hi[0], -lo[1], -lo[2]]]
}

/// Random pose inside the per-part boxes scaled by `difficulty`, and β
/// uniform in `[-2·difficulty, 2·difficulty]`.
pub fn sample_pose_shape(seed: u64, difficulty: f64) -> Result<(PoseParams<f64>, ShapeParams<f64>)> {
    if !(0.0..=1.0).contains(&difficulty) {
        return Err(Error::InvalidArgument(format!("difficulty {difficulty} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose = (0..NUM_JOINTS)
        .map(|part| {
            let [lo, hi] = pose_box(part);
            AxisAngle(std::array::from_fn(|a| difficulty * (lo[a] + rng.random::<f64>() * (hi[a] - lo[a]))))
        })
        .collect();
    let betas = std::array::from_fn(|_| difficulty * (4.0 * rng.random::<f64>() - 2.0));
    Ok((PoseParams(pose), ShapeParams(betas)))
}

/// Splat radius in cells for a grid of `size`.
pub fn splat_radius(size: usize) -> usize {
    (size / 24).max(1)
}

/// Renders a part segmentation by projecting every vertex and stamping its
/// group id into a disc of cells; the vertex nearest the camera wins, and
/// ties go to the lower vertex index.
pub fn rasterize(
    model: &BodyModel<f64>,
    camera: &Camera<f64>,
    rotations: &RotationSet<f64>,
    betas: &ShapeParams<f64>,
    size: usize,
    granularity: usize,
) -> Result<PartSegGrid> {
    if size < MIN_GRID_SIZE {
        return Err(Error::InvalidArgument(format!("grid size {size} below {MIN_GRID_SIZE}")));
    }
    let map = GranularityMap::new(granularity)?;
    let vertices = model.skin_rotations(rotations, betas).vertices;
    let pixels = camera.project(&vertices)?;
    let (sx, sy) = (size as f64 / camera.width as f64, size as f64 / camera.height as f64);
    let r = splat_radius(size) as f64;
    let mut depth = vec![f64::INFINITY; size * size];
    let mut owner = vec![usize::MAX; size * size];
    for (i, (v, p)) in vertices.iter().zip(&pixels).enumerate() {
        let (cu, cv) = (p[0] * sx, p[1] * sy);
        let z = v.z() + camera.distance;
        let span = |c: f64| {
            let lo = ((c - r - 0.5).ceil() as isize).max(0);
            let hi = ((c + r - 0.5).floor() as isize).min(size as isize - 1);
            lo..=hi
        };
        for row in span(cv) {
            for col in span(cu) {
                let (dx, dy) = (col as f64 + 0.5 - cu, row as f64 + 0.5 - cv);
                if dx * dx + dy * dy > r * r {
                    continue;
                }
                let idx = row as usize * size + col as usize;
                if z < depth[idx] {
                    depth[idx] = z;
                    owner[idx] = i;
                }
            }
        }
    }
    let labels = model.part_labels();
    let cells = owner.iter().map(|&o| if o == usize::MAX { BACKGROUND } else { map.cell_id(labels[o]) }).collect();
    PartSegGrid::new(size, granularity, cells, Provenance::GroundTruth)
}

/// Pose of the left/right mirror image: partners swap and each rotation is
/// conjugated by the reflection `x → -x`.
pub fn mirror_pose(pose: &PoseParams<f64>) -> PoseParams<f64> {
    PoseParams(
        (0..pose.len())
            .map(|p| {
                let [x, y, z] = pose.0[MIRROR_PARTNER[p]].0;
                AxisAngle([x, -y, -z])
            })
            .collect(),
    )
}

pub fn mirror_points(points: &[Vec3<f64>]) -> Vec<Vec3<f64>> {
    (0..points.len())
        .map(|j| {
            let p = points[MIRROR_PARTNER[j]];
            Vec3::new(-p.x(), p.y(), p.z())
        })
        .collect()
}

/// Mirrors image points about the principal point's column.
pub fn mirror_pixels(camera: &Camera<f64>, points: &[Point2<f64>]) -> Vec<Point2<f64>> {
    (0..points.len())
        .map(|j| {
            let p = points[MIRROR_PARTNER[j]];
            [2.0 * camera.cx - p[0], p[1]]
        })
        .collect()
}

/// Shape coefficients are symmetric under mirroring.
pub fn mirror_betas(betas: &ShapeParams<f64>) -> ShapeParams<f64> {
    *betas
}
