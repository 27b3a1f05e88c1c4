//! Pose error measures, rigid alignment and aggregate reports.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::body_model::RotationSet;
use crate::camera::{Camera, Point2};
use crate::error::{Error, Result};
use crate::kinematics::{svd3, Quaternion, HEAD, NECK};
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;

/// Mean per-joint Euclidean distance.
pub fn e_joints<T: Real>(pred: &[Vec3<T>], gt: &[Vec3<T>]) -> T {
    assert_eq!(pred.len(), gt.len(), "joint count");
    if pred.is_empty() {
        return T::zero();
    }
    pred.iter().zip(gt).map(|(a, b)| (*a - *b).norm()).sum::<T>() / T::of_usize(pred.len())
}

/// Length of the neck–head segment in ground-truth 2D.
pub fn head_size<T: Real>(gt_2d: &[Point2<T>]) -> T {
    let (a, b) = (gt_2d[HEAD], gt_2d[NECK]);
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Percentage of joints whose 2D error is strictly below half the head size.
pub fn pckh<T: Real>(pred_2d: &[Point2<T>], gt_2d: &[Point2<T>], head_size: T) -> Result<f64> {
    if !(head_size > T::zero()) {
        return Err(Error::InvalidArgument(format!("head size must be positive, got {head_size}")));
    }
    assert_eq!(pred_2d.len(), gt_2d.len(), "joint count");
    if pred_2d.is_empty() {
        return Ok(100.0);
    }
    let threshold = head_size * T::of(0.5);
    let hits = pred_2d
        .iter()
        .zip(gt_2d)
        .filter(|(p, g)| ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt() < threshold)
        .count();
    Ok(100.0 * hits as f64 / pred_2d.len() as f64)
}

/// Mean quaternion distance over parts, radians.
pub fn e_quat<T: Real>(pred: &RotationSet<T>, gt: &RotationSet<T>) -> T {
    assert_eq!(pred.len(), gt.len(), "part count");
    if pred.is_empty() {
        return T::zero();
    }
    pred.0
        .iter()
        .zip(&gt.0)
        .map(|(a, b)| crate::kinematics::quat_distance(&Quaternion::from_rotation(a), &Quaternion::from_rotation(b)))
        .sum::<T>()
        / T::of_usize(pred.len())
}

/// Result of [`procrustes_align`]: `aligned = scale · R · pred + t`.
#[derive(Clone, Debug)]
pub struct Alignment<T> {
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
    pub scale: T,
    pub aligned: Vec<Vec3<T>>,
    /// Mean per-joint error after alignment.
    pub residual: T,
}

fn centroid<T: Real>(points: &[Vec3<T>]) -> Vec3<T> {
    points.iter().fold(Vec3::zero(), |acc, p| acc + *p).scale(T::one() / T::of_usize(points.len()))
}

/// Least-squares rigid (optionally similarity) alignment of `pred` onto `gt`.
pub fn procrustes_align<T: Real>(pred: &[Vec3<T>], gt: &[Vec3<T>], with_scale: bool) -> Result<Alignment<T>> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidArgument(format!("{} predicted vs {} reference points", pred.len(), gt.len())));
    }
    if gt.len() < 3 {
        return Err(Error::DegenerateConfiguration(format!("{} points cannot fix a rotation", gt.len())));
    }
    let mp = centroid(pred);
    let mg = centroid(gt);
    let mut scatter_gt = Mat3::zero();
    let mut cross = Mat3::zero();
    let mut pred_var = T::zero();
    for (p, g) in pred.iter().zip(gt) {
        let (dp, dg) = (*p - mp, *g - mg);
        scatter_gt += dg.outer(&dg);
        cross += dg.outer(&dp);
        pred_var += dp.norm_squared();
    }
    let spread = svd3(&scatter_gt).sigma;
    if !(spread[1] > spread[0] * T::of(1e-12)) {
        return Err(Error::DegenerateConfiguration("reference points are collinear or coincident".into()));
    }
    let svd = svd3(&cross);
    let d = (svd.u.det() * svd.v.det()).signum();
    let fix = Mat3::diag(T::one(), T::one(), d);
    let rotation = svd.u.matmul(&fix).matmul(&svd.v.transpose());
    let scale = if with_scale {
        if !(pred_var > T::zero()) {
            return Err(Error::DegenerateConfiguration("predicted points are coincident".into()));
        }
        (svd.sigma[0] + svd.sigma[1] + d * svd.sigma[2]) / pred_var
    } else {
        T::one()
    };
    let translation = mg - rotation.mul_vec(&mp).scale(scale);
    let aligned: Vec<Vec3<T>> = pred.iter().map(|p| rotation.mul_vec(p).scale(scale) + translation).collect();
    let residual = e_joints(&aligned, gt);
    Ok(Alignment { rotation, translation, scale, aligned, residual })
}

/// Per-example row of a report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleMetrics {
    pub e_joints: f64,
    pub pckh: f64,
    pub e_quat: f64,
    pub procrustes: f64,
}

/// Every measure for one prediction; 2D positions come from projecting both joint sets.
pub fn evaluate_example<T: Real>(
    camera: &Camera<T>,
    pred_joints: &[Vec3<T>],
    pred_rotations: &RotationSet<T>,
    gt_joints: &[Vec3<T>],
    gt_rotations: &RotationSet<T>,
) -> Result<ExampleMetrics> {
    let pred_2d = camera.project(pred_joints)?;
    let gt_2d = camera.project(gt_joints)?;
    Ok(ExampleMetrics {
        e_joints: e_joints(pred_joints, gt_joints).to_f64_lossy(),
        pckh: pckh(&pred_2d, &gt_2d, head_size(&gt_2d))?,
        e_quat: e_quat(pred_rotations, gt_rotations).to_f64_lossy(),
        procrustes: procrustes_align(pred_joints, gt_joints, false)?.residual.to_f64_lossy(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub median: f64,
}

impl Aggregate {
    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
        Some(Aggregate { mean, median })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub e_joints: Aggregate,
    pub pckh: Aggregate,
    pub e_quat: Aggregate,
    pub procrustes: Aggregate,
}

/// Per-example rows plus mean/median aggregates; `summary` is `None` when empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub count: usize,
    pub examples: Vec<ExampleMetrics>,
    pub summary: Option<Summary>,
}

pub const REPORT_COLUMNS: [&str; 5] = ["example", "e_joints_mm", "pckh_pct", "e_quat_rad", "procrustes_mm"];

impl MetricsReport {
    pub fn new(examples: Vec<ExampleMetrics>) -> Self {
        let column = |f: fn(&ExampleMetrics) -> f64| examples.iter().map(f).collect::<Vec<_>>();
        let summary = Aggregate::of(&column(|e| e.e_joints)).map(|e_joints| Summary {
            e_joints,
            pckh: Aggregate::of(&column(|e| e.pckh)).expect("non-empty"),
            e_quat: Aggregate::of(&column(|e| e.e_quat)).expect("non-empty"),
            procrustes: Aggregate::of(&column(|e| e.procrustes)).expect("non-empty"),
        });
        MetricsReport { count: examples.len(), examples, summary }
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// One row per example, then `mean` and `median` rows; an empty report
    /// writes a single `empty` row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(REPORT_COLUMNS).map_err(csv_err)?;
        let row = |name: String, m: [f64; 4]| {
            let mut r = vec![name];
            r.extend(m.iter().map(|v| format!("{v:.6}")));
            r
        };
        for (i, e) in self.examples.iter().enumerate() {
            w.write_record(row(i.to_string(), [e.e_joints, e.pckh, e.e_quat, e.procrustes])).map_err(csv_err)?;
        }
        match &self.summary {
            Some(s) => {
                let pick = |f: fn(&Aggregate) -> f64| [f(&s.e_joints), f(&s.pckh), f(&s.e_quat), f(&s.procrustes)];
                w.write_record(row("mean".into(), pick(|a| a.mean))).map_err(csv_err)?;
                w.write_record(row("median".into(), pick(|a| a.median))).map_err(csv_err)?;
            }
            None => w.write_record(["empty", "", "", "", ""]).map_err(csv_err)?,
        }
        w.flush()?;
        Ok(())
    }

    /// Fixed-width mean/median table for terminals.
    pub fn to_table(&self) -> String {
        let Some(s) = &self.summary else {
            return "empty report (0 examples)\n".into();
        };
        let mut t = format!("{:<8}{:>14}{:>12}{:>14}{:>16}\n", "", "e_joints mm", "PCKh %", "e_quat rad", "procrustes mm");
        for (name, f) in [("mean", (|a: &Aggregate| a.mean) as fn(&Aggregate) -> f64), ("median", |a: &Aggregate| a.median)] {
            t += &format!("{name:<8}{:>14.2}{:>12.1}{:>14.3}{:>16.2}\n", f(&s.e_joints), f(&s.pckh), f(&s.e_quat), f(&s.procrustes));
        }
        t += &format!("{} examples\n", self.count);
        t
    }
}

/// Spearman rank correlation with average ranks for ties; `None` when
/// either sample is constant or the lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}
