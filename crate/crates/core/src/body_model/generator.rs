//! Procedural humanoid with the same structure as a learned body model.
//!
//! Coordinates are camera aligned: `+x` is the person's left (image right),
//! `+y` points down, `+z` points away from the camera. The person faces the
//! camera. Every array is built mirror symmetric about the `x = 0` plane so
//! that left/right reflection of a pose is an exact symmetry of the model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::body_model::model::{BodyModel, BodyModelParts, NUM_BETAS, POSE_FEATURE_DIM};
use crate::error::{Error, Result};
use crate::kinematics::{KinematicTree, MIRROR_PARTNER, NUM_JOINTS};
use crate::linalg::Vec3;

pub const DEFAULT_VERTEX_COUNT: usize = 400;
pub const MIN_VERTEX_COUNT: usize = 200;

const NUM_LANDMARKS: usize = 31;
const HEAD_END: usize = 24;
const LEFT_HAND_END: usize = 25;
const RIGHT_HAND_END: usize = 26;
const LEFT_TOE_END: usize = 27;
const RIGHT_TOE_END: usize = 28;
const LEFT_PELVIS_SIDE: usize = 29;
const RIGHT_PELVIS_SIDE: usize = 30;

/// Parts whose vertices are sampled; the rest are their mirror images.
const PRIMARY_PARTS: [usize; 15] = [0, 3, 6, 9, 12, 15, 1, 4, 7, 10, 13, 16, 18, 20, 22];

const SKIN_FALLOFF_MM: f64 = 25.0;
const REGRESSOR_KERNEL_MM: f64 = 45.0;
const POSE_BASIS_MAX_MM: f64 = 4.5;

/// Designed rest positions of the 24 joints followed by the extra landmarks.
fn landmark_positions() -> [Vec3<f64>; NUM_LANDMARKS] {
    let mut p = [Vec3::zero(); NUM_LANDMARKS];
    let mut set = |i: usize, x: f64, y: f64, z: f64| p[i] = Vec3::new(x, y, z);
    set(0, 0.0, 0.0, 0.0);
    set(1, 85.0, 70.0, 0.0);
    set(3, 0.0, -100.0, 0.0);
    set(4, 95.0, 470.0, 0.0);
    set(6, 0.0, -230.0, 0.0);
    set(7, 100.0, 850.0, 0.0);
    set(9, 0.0, -360.0, 0.0);
    set(10, 100.0, 900.0, -110.0);
    set(12, 0.0, -520.0, 0.0);
    set(13, 70.0, -470.0, 0.0);
    set(15, 0.0, -620.0, 0.0);
    set(16, 180.0, -480.0, 0.0);
    set(18, 440.0, -480.0, 0.0);
    set(20, 680.0, -480.0, 0.0);
    set(22, 770.0, -480.0, 0.0);
    set(HEAD_END, 0.0, -730.0, 0.0);
    set(LEFT_HAND_END, 850.0, -480.0, 0.0);
    set(LEFT_TOE_END, 100.0, 905.0, -170.0);
    set(LEFT_PELVIS_SIDE, 85.0, 60.0, 0.0);
    for i in 0..NUM_LANDMARKS {
        let m = landmark_partner(i);
        if m != i && p[m] == Vec3::zero() {
            p[m] = Vec3::new(-p[i].x(), p[i].y(), p[i].z());
        }
    }
    p
}

fn landmark_partner(i: usize) -> usize {
    match i {
        0..=23 => MIRROR_PARTNER[i],
        LEFT_HAND_END => RIGHT_HAND_END,
        RIGHT_HAND_END => LEFT_HAND_END,
        LEFT_TOE_END => RIGHT_TOE_END,
        RIGHT_TOE_END => LEFT_TOE_END,
        LEFT_PELVIS_SIDE => RIGHT_PELVIS_SIDE,
        RIGHT_PELVIS_SIDE => LEFT_PELVIS_SIDE,
        other => other,
    }
}

fn landmark_parent(i: usize) -> Option<usize> {
    match i {
        0..=23 => crate::kinematics::HUMANOID_PARENTS[i],
        HEAD_END => Some(15),
        LEFT_HAND_END => Some(22),
        RIGHT_HAND_END => Some(23),
        LEFT_TOE_END => Some(10),
        RIGHT_TOE_END => Some(11),
        LEFT_PELVIS_SIDE => Some(1),
        RIGHT_PELVIS_SIDE => Some(2),
        _ => None,
    }
}

/// Capsule of each part as (start landmark, end landmark, radius mm).
fn capsule(part: usize) -> (usize, usize, f64) {
    let left = match part {
        0 => (LEFT_PELVIS_SIDE, RIGHT_PELVIS_SIDE, 100.0),
        3 => (3, 6, 115.0),
        6 => (6, 9, 120.0),
        9 => (9, 12, 125.0),
        12 => (12, 15, 50.0),
        15 => (15, HEAD_END, 90.0),
        1 => (1, 4, 75.0),
        4 => (4, 7, 55.0),
        7 => (7, 10, 42.0),
        10 => (10, LEFT_TOE_END, 30.0),
        13 => (13, 16, 45.0),
        16 => (16, 18, 45.0),
        18 => (18, 20, 38.0),
        20 => (20, 22, 35.0),
        22 => (22, LEFT_HAND_END, 28.0),
        right => {
            let (a, b, r) = capsule(MIRROR_PARTNER[right]);
            return (landmark_partner(a), landmark_partner(b), r);
        }
    };
    left
}

/// Bone-length factors per landmark and radial factors per part for one
/// shape direction. Values are the relative change per unit coefficient.
struct ShapeDirection {
    bone: [f64; NUM_LANDMARKS],
    radial: [f64; NUM_JOINTS],
}

fn shape_directions() -> Vec<ShapeDirection> {
    let mut dirs = Vec::with_capacity(NUM_BETAS);
    let mut make = |bones: &[(usize, f64)], radial: &[(usize, f64)]| {
        let mut d = ShapeDirection { bone: [0.0; NUM_LANDMARKS], radial: [0.0; NUM_JOINTS] };
        for &(l, v) in bones {
            d.bone[l] = v;
            d.bone[landmark_partner(l)] = v;
        }
        for &(p, v) in radial {
            d.radial[p] = v;
            d.radial[MIRROR_PARTNER[p]] = v;
        }
        dirs.push(d);
    };
    let all_bones: Vec<(usize, f64)> = (0..NUM_LANDMARKS).map(|l| (l, 0.04)).collect();
    let all_parts: Vec<(usize, f64)> = (0..NUM_JOINTS).map(|p| (p, 0.04)).collect();
    // 0: overall scale
    make(&all_bones, &all_parts);
    // 1: leg length
    make(&[(4, 0.05), (7, 0.05)], &[]);
    // 2: arm length
    make(&[(18, 0.05), (20, 0.05), (22, 0.05), (LEFT_HAND_END, 0.05)], &[]);
    // 3: torso length
    make(&[(3, 0.06), (6, 0.06), (9, 0.06), (12, 0.06)], &[]);
    // 4: torso girth
    make(&[], &[(0, 0.08), (3, 0.08), (6, 0.08), (9, 0.08)]);
    // 5: limb girth
    make(&[], &[(1, 0.1), (4, 0.1), (16, 0.1), (18, 0.1)]);
    // 6: shoulder width
    make(&[(16, 0.15)], &[]);
    // 7: hip width
    make(&[(1, 0.1)], &[(0, 0.05)]);
    // 8: head size
    make(&[(15, 0.08), (HEAD_END, 0.1)], &[(15, 0.1), (12, 0.05)]);
    // 9: hand and foot size
    make(&[(10, 0.1), (LEFT_TOE_END, 0.1), (LEFT_HAND_END, 0.1)], &[(7, 0.1), (10, 0.1), (20, 0.1), (22, 0.1)]);
    dirs
}

fn capsule_area(part: usize, pos: &[Vec3<f64>; NUM_LANDMARKS]) -> f64 {
    let (a, b, r) = capsule(part);
    let len = (pos[b] - pos[a]).norm();
    2.0 * std::f64::consts::PI * r * len + 4.0 * std::f64::consts::PI * r * r
}

fn sample_capsule(rng: &mut ChaCha8Rng, a: Vec3<f64>, b: Vec3<f64>, r: f64) -> Vec3<f64> {
    let axis = b - a;
    let len = axis.norm();
    let dir = axis.scale(1.0 / len);
    let cylinder = 2.0 * std::f64::consts::PI * r * len;
    let caps = 4.0 * std::f64::consts::PI * r * r;
    if rng.random::<f64>() * (cylinder + caps) < cylinder {
        let helper = if dir.x().abs() < 0.9 { Vec3::unit(0) } else { Vec3::unit(1) };
        let e1 = dir.cross(&helper).normalized();
        let e2 = dir.cross(&e1);
        let t: f64 = rng.random();
        let phi = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
        a + axis.scale(t) + (e1.scale(phi.cos()) + e2.scale(phi.sin())).scale(r)
    } else {
        let u = loop {
            let g = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
            let n = g.norm();
            if n > 1e-9 {
                break g.scale(1.0 / n);
            }
        };
        let center = if u.dot(&dir) >= 0.0 { b } else { a };
        center + u.scale(r)
    }
}

fn segment_distance(p: &Vec3<f64>, a: &Vec3<f64>, b: &Vec3<f64>) -> (f64, f64) {
    let ab = *b - *a;
    let t = ((*p - *a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    ((*p - (*a + ab.scale(t))).norm(), t)
}

fn mirror(p: &Vec3<f64>) -> Vec3<f64> {
    Vec3::new(-p.x(), p.y(), p.z())
}

const AXIS_SIGN: [f64; 3] = [-1.0, 1.0, 1.0];

/// Builds a deterministic desk-scale humanoid with `vertex_count` vertices.
pub fn generate_desk_model(seed: u64, vertex_count: usize) -> Result<BodyModel<f64>> {
    if vertex_count < MIN_VERTEX_COUNT {
        return Err(Error::InvalidArgument(format!(
            "vertex count {vertex_count} is below the minimum of {MIN_VERTEX_COUNT}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = landmark_positions();
    let half = vertex_count / 2;

    // vertex budget per primary part, proportional to capsule area
    let areas: Vec<f64> = PRIMARY_PARTS.iter().map(|&p| capsule_area(p, &pos)).collect();
    let total_area: f64 = areas.iter().sum();
    let mut counts: Vec<usize> =
        areas.iter().map(|a| ((half as f64) * a / total_area).round().max(3.0) as usize).collect();
    let largest = (0..counts.len()).max_by(|&i, &j| areas[i].total_cmp(&areas[j])).unwrap_or(0);
    let assigned: usize = counts.iter().sum();
    counts[largest] = (counts[largest] + half).checked_sub(assigned).expect("largest part absorbs rounding");

    let mut primary: Vec<(Vec3<f64>, usize)> = Vec::with_capacity(half);
    for (&part, &n) in PRIMARY_PARTS.iter().zip(&counts) {
        let (a, b, r) = capsule(part);
        for _ in 0..n {
            primary.push((sample_capsule(&mut rng, pos[a], pos[b], r), part));
        }
    }
    debug_assert_eq!(primary.len(), half);

    let mut vertices: Vec<Vec3<f64>> = primary.iter().map(|(p, _)| *p).collect();
    let mut labels: Vec<usize> = primary.iter().map(|(_, l)| *l).collect();
    vertices.extend(primary.iter().map(|(p, _)| mirror(p)));
    labels.extend(primary.iter().map(|(_, l)| MIRROR_PARTNER[*l]));
    let odd = vertex_count % 2 == 1;
    if odd {
        let (_, _, r) = capsule(15);
        vertices.push(pos[HEAD_END] - Vec3::new(0.0, r, 0.0));
        labels.push(15);
    }
    let n = vertices.len();
    let mirror_index = |i: usize| if i < half { i + half } else if i < 2 * half { i - half } else { i };
    // indices whose arrays are computed directly; the others are mirror images
    let computed: Vec<usize> = (0..half).chain(if odd { Some(2 * half) } else { None }).collect();

    // skinning: owning part blended with the nearest other bone
    let mut skinning = vec![0.0; n * NUM_JOINTS];
    for &i in &computed {
        let v = vertices[i];
        let own = labels[i];
        let (oa, ob, _) = capsule(own);
        let (d_own, _) = segment_distance(&v, &pos[oa], &pos[ob]);
        let (other, d_other) = (0..NUM_JOINTS)
            .filter(|&p| p != own)
            .map(|p| {
                let (a, b, _) = capsule(p);
                (p, segment_distance(&v, &pos[a], &pos[b]).0)
            })
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .expect("more than one part");
        let w_own = 1.0 / (1.0 + ((d_own - d_other) / SKIN_FALLOFF_MM).exp());
        skinning[i * NUM_JOINTS + own] = w_own;
        skinning[i * NUM_JOINTS + other] += 1.0 - w_own;
        let m = mirror_index(i);
        if m != i {
            for k in 0..NUM_JOINTS {
                skinning[m * NUM_JOINTS + MIRROR_PARTNER[k]] = skinning[i * NUM_JOINTS + k];
            }
        }
    }

    // shape basis from landmark displacement fields
    let dirs = shape_directions();
    let mut shape_basis = vec![0.0; n * 3 * NUM_BETAS];
    for (s, dir) in dirs.iter().enumerate() {
        let mut disp = [Vec3::zero(); NUM_LANDMARKS];
        for l in 0..NUM_LANDMARKS {
            if let Some(p) = landmark_parent(l) {
                disp[l] = disp[p] + (pos[l] - pos[p]).scale(dir.bone[l]);
            }
        }
        for &i in &computed {
            let v = vertices[i];
            let part = labels[i];
            let (a, b, _) = capsule(part);
            let (_, t) = segment_distance(&v, &pos[a], &pos[b]);
            let axis_point = pos[a] + (pos[b] - pos[a]).scale(t);
            let offset = disp[a].scale(1.0 - t) + disp[b].scale(t) + (v - axis_point).scale(dir.radial[part]);
            let m = mirror_index(i);
            for c in 0..3 {
                let value = if odd && i == 2 * half && c == 0 { 0.0 } else { offset.0[c] };
                shape_basis[(i * 3 + c) * NUM_BETAS + s] = value;
                if m != i {
                    shape_basis[(m * 3 + c) * NUM_BETAS + s] = AXIS_SIGN[c] * value;
                }
            }
        }
    }

    // pose basis: smooth local response to the own and parent joint features
    let coeffs: Vec<[[f64; 9]; 3]> = (0..NUM_JOINTS)
        .map(|_| std::array::from_fn(|_| std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal))))
        .collect();
    let mut pose_basis = vec![0.0; n * 3 * POSE_FEATURE_DIM];
    for i in 0..half {
        let v = vertices[i];
        let part = labels[i];
        let drivers = [Some(part), crate::kinematics::HUMANOID_PARENTS[part]];
        let m = mirror_index(i);
        for joint in drivers.into_iter().flatten().filter(|&j| j != 0) {
            let falloff = ((v - pos[joint]).norm() / 80.0).cos().max(0.0);
            for c in 0..3 {
                for e in 0..9 {
                    let value = coeffs[joint][c][e] * falloff;
                    pose_basis[(i * 3 + c) * POSE_FEATURE_DIM + (joint - 1) * 9 + e] += value;
                    let (ra, rb) = (e / 3, e % 3);
                    let sign = AXIS_SIGN[c] * AXIS_SIGN[ra] * AXIS_SIGN[rb];
                    pose_basis[(m * 3 + c) * POSE_FEATURE_DIM + (MIRROR_PARTNER[joint] - 1) * 9 + e] += sign * value;
                }
            }
        }
    }
    let worst_row = pose_basis
        .chunks_exact(POSE_FEATURE_DIM)
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if worst_row > 0.0 {
        let scale = POSE_BASIS_MAX_MM / worst_row;
        for x in &mut pose_basis {
            *x *= scale;
        }
    }

    // joint regressor: Gaussian kernel around the designed joint over the
    // vertices of the joint's own, parent and child parts
    let tree = KinematicTree::humanoid();
    let mut regressor = vec![0.0; NUM_JOINTS * n];
    for j in 0..NUM_JOINTS {
        if MIRROR_PARTNER[j] < j {
            continue;
        }
        let mut support = vec![j];
        support.extend(tree.parent(j));
        support.extend(tree.children(j));
        let row = &mut regressor[j * n..(j + 1) * n];
        for i in 0..n {
            if support.contains(&labels[i]) {
                let d2 = (vertices[i] - pos[j]).norm_squared();
                row[i] = (-d2 / (2.0 * REGRESSOR_KERNEL_MM * REGRESSOR_KERNEL_MM)).exp();
            }
        }
        let total: f64 = row.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidModel(format!("joint {j} has an empty regressor support")));
        }
        for w in row.iter_mut() {
            *w /= total;
        }
        let partner = MIRROR_PARTNER[j];
        if partner != j {
            for i in 0..n {
                regressor[partner * n + mirror_index(i)] = regressor[j * n + i];
            }
        }
    }

    // vertical origin halfway between the extent midpoint and the vertex
    // mean, which puts the silhouette's area centroid near the optical axis
    // while keeping head and feet inside the frame; mean depth at zero
    let (min_y, max_y) = vertices.iter().fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v.y()), hi.max(v.y())));
    let mean_y = vertices.iter().map(|v| v.y()).sum::<f64>() / n as f64;
    let mean_z = vertices.iter().map(|v| v.z()).sum::<f64>() / n as f64;
    let shift = Vec3::new(0.0, -((min_y + max_y) / 2.0 + mean_y) / 2.0, -mean_z);
    for v in &mut vertices {
        *v += shift;
    }

    BodyModel::new(BodyModelParts {
        template: vertices,
        shape_basis,
        pose_basis,
        skinning_weights: skinning,
        joint_regressor: regressor,
        tree,
        part_labels: labels,
    })
}

/// Index of the vertex mirrored across `x = 0` for models from [`generate_desk_model`].
pub fn desk_mirror_index(vertex_count: usize, i: usize) -> usize {
    let half = vertex_count / 2;
    if i < half {
        i + half
    } else if i < 2 * half {
        i - half
    } else {
        i
    }
}
