//! Acceptance suite: one PASS/FAIL line per criterion. Runs every criterion,
//! then exits non-zero if any failed. Positional arguments select criteria
//! by number or by a substring of their name.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Output};
use std::time::{Duration, Instant};

use bodyfit::body_model::{generate_desk_model, BodyModel, PoseParams, ShapeParams, MIN_VERTEX_COUNT};
use bodyfit::camera::{default_camera, Camera};
use bodyfit::fitter::{fit_batch, FitConfig, FitItem, InitMode};
use bodyfit::kinematics::{project_to_so3, rodrigues, AxisAngle, Quaternion, RotationMatrix};
use bodyfit::linalg::{Mat3, Vec3};
use bodyfit::losses::AnnotationMask;
use bodyfit::manifest::RunManifest;
use bodyfit::metrics::{procrustes_align, spearman, Summary};
use bodyfit::regressor::{evaluate, train, RegressorNet, TrainConfig, TrainExample};
use bodyfit::synth::{Dataset, DatasetSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

// Tolerances and budgets, fixed here rather than taken from the command line.
const GRADCHECK_CONFIGS: usize = 20;
const GRADCHECK_TOL: f64 = 1e-4;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(120);
const EQUIVARIANCE_TOL: f64 = 1e-9;
const ROW_SUM_TOL: f64 = 1e-12;
const SO3_TOL: f64 = 1e-10;
const SO3_ORACLE_SAMPLES: usize = 100_000;
const SO3_NOISY_INPUTS: usize = 20;
const PROCRUSTES_RECOVERY_TOL: f64 = 1e-8;
const PROCRUSTES_ORACLE_TOL: f64 = 1e-9;
const PROCRUSTES_PAIRS: usize = 100;
const FIT_EXAMPLES: usize = 50;
const FIT_SIGMA: f64 = 0.1;
const FIT_ITERATIONS: usize = 500;
const FIT_MAX_MEAN_MM: f64 = 10.0;
const FIT_BUDGET: Duration = Duration::from_secs(300);
const TRAIN_EXAMPLES: usize = 2000;
const VAL_EXAMPLES: usize = 500;
const DIFFICULTY: f64 = 0.5;
const ABLATION_QUAT_RATIO: f64 = 3.0;
const ABLATION_PCKH_POINTS: f64 = 5.0;
const ABLATION_BUDGET: Duration = Duration::from_secs(30 * 60);
const SWEEP_FRACTIONS: [f64; 5] = [1.0, 0.5, 0.2, 0.1, 0.0];
const SWEEP_JOINT_SLACK: f64 = 0.15;
const SWEEP_QUAT_RATIO: f64 = 3.0;
const SWEEP_BUDGET: Duration = Duration::from_secs(2 * 3600);
const GRANULARITY_GAIN: f64 = 0.25;
const GRANULARITY_PLATEAU: f64 = 0.15;
const CORRUPTION_RATES: [f64; 4] = [0.0, 0.1, 0.2, 0.4];
const CORRUPTION_MAX_RHO: f64 = -0.3;

const TRAIN_SEED: u64 = 1;
const VAL_SEED: u64 = 2;

type Check = fn(&mut Lab) -> Result<Verdict, String>;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Result<Verdict, String> {
    Ok(Verdict { passed, detail })
}

fn main() -> ExitCode {
    let selected: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let criteria: [(u8, &str, Check); 10] = [
        (1, "differentiability", differentiability),
        (2, "model correctness", model_correctness),
        (3, "rotation layer", rotation_layer),
        (4, "procrustes", procrustes),
        (5, "fitting recovery", fitting_recovery),
        (6, "loss ablation", loss_ablation),
        (7, "supervision fraction", supervision_fraction),
        (8, "granularity", granularity),
        (9, "segmentation quality", segmentation_quality),
        (10, "determinism", determinism),
    ];
    let mut lab = Lab::new();
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, check) in criteria {
        if !selected.is_empty() && !selected.iter().any(|s| s == &id.to_string() || name.contains(s.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let (passed, detail) = match check(&mut lab) {
            Ok(v) => (v.passed, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!passed);
        println!("{} {id:>2} {name}: {detail} [{:.1} s]", if passed { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

/// Datasets and trained nets shared between criteria.
struct Lab {
    dir: tempfile::TempDir,
    model: Option<BodyModel<f64>>,
    camera: Camera<f64>,
    nets: Vec<(usize, RegressorNet<f64>)>,
}

impl Lab {
    fn new() -> Self {
        Lab { dir: tempfile::tempdir().expect("temp dir"), model: None, camera: default_camera(), nets: Vec::new() }
    }

    fn model(&mut self) -> Result<BodyModel<f64>, String> {
        if self.model.is_none() {
            self.model = Some(DatasetSpec::default().model().map_err(s)?);
        }
        Ok(self.model.clone().expect("set above"))
    }

    fn examples(&self, spec: DatasetSpec) -> Result<Vec<TrainExample<f64>>, String> {
        let d = Dataset::generate(&spec, RunManifest::new("gen", spec.seed, "")).map_err(s)?;
        Ok(d.examples.iter().map(TrainExample::from_annotated).collect())
    }

    fn train_spec(granularity: usize) -> DatasetSpec {
        DatasetSpec { examples: TRAIN_EXAMPLES, seed: TRAIN_SEED, difficulty: DIFFICULTY, granularity, ..Default::default() }
    }

    fn val_spec(granularity: usize, corruption: f64) -> DatasetSpec {
        DatasetSpec { examples: VAL_EXAMPLES, seed: VAL_SEED, difficulty: DIFFICULTY, granularity, corruption, ..Default::default() }
    }

    fn train(&mut self, granularity: usize, config: &TrainConfig) -> Result<RegressorNet<f64>, String> {
        let model = self.model()?;
        let examples = self.examples(Self::train_spec(granularity))?;
        let net = RegressorNet::new(bodyfit::synth::DEFAULT_GRID_SIZE, granularity, &config.hidden, config.seed).map_err(s)?;
        Ok(train(net, &examples, &[], &model, &self.camera, config).map_err(s)?.net)
    }

    /// Net trained with every loss term at full supervision.
    fn full_net(&mut self, granularity: usize) -> Result<RegressorNet<f64>, String> {
        if let Some((_, n)) = self.nets.iter().find(|(p, _)| *p == granularity) {
            return Ok(n.clone());
        }
        let net = self.train(granularity, &TrainConfig::default())?;
        self.nets.push((granularity, net.clone()));
        Ok(net)
    }

    fn val_summary(&mut self, net: &RegressorNet<f64>, granularity: usize) -> Result<Summary, String> {
        let model = self.model()?;
        let val = self.examples(Self::val_spec(granularity, 0.0))?;
        evaluate(net, &val, &model, &self.camera).map_err(s)?.report.summary.ok_or("empty validation report".into())
    }
}

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_bodyfit")
}

fn run_cli(args: &[&str]) -> Result<Output, String> {
    let out = Command::new(bin()).args(args).output().map_err(s)?;
    if !out.status.success() {
        return Err(format!("`bodyfit {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(out)
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn differentiability(lab: &mut Lab) -> Result<Verdict, String> {
    let report = lab.dir.path().join("gradcheck.json");
    let configs = GRADCHECK_CONFIGS.to_string();
    let tol = GRADCHECK_TOL.to_string();
    let start = Instant::now();
    let out = Command::new(bin())
        .args(["--seed", "0", "--out", path_str(&report), "gradcheck", "--configs", &configs, "--tol", &tol])
        .output()
        .map_err(s)?;
    let elapsed = start.elapsed();
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).map_err(s)?).map_err(s)?;
    let worst = json["worst"].as_f64().ok_or("report lacks worst error")?;
    let checks = json["checks"].as_array().map_or(0, |c| c.len());
    let terms: std::collections::BTreeSet<&str> = json["checks"].as_array().into_iter().flatten().filter_map(|c| c["term"].as_str()).collect();
    let covers = ["latent", "joints_3d", "joints_2d", "joints_2d+3d"].iter().all(|t| terms.contains(t));
    verdict(
        out.status.success() && worst < GRADCHECK_TOL && covers && elapsed < GRADCHECK_BUDGET,
        format!("worst relative error {worst:.2e} over {checks} checks ({} terms), exit {:?}", terms.len(), out.status.code()),
    )
}

fn model_correctness(_: &mut Lab) -> Result<Verdict, String> {
    let mut worst_template = 0.0f64;
    let mut worst_equivariance = 0.0f64;
    let mut worst_rows = 0.0f64;
    let mut models = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for seed in 0..6 {
        for vertices in [MIN_VERTEX_COUNT, 400, 1000, 2500] {
            let m = generate_desk_model(seed, vertices).map_err(s)?;
            models += 1;
            let k = m.num_parts();
            let rest = m.skin(&PoseParams::zeros(k), &ShapeParams::zeros());
            for (a, b) in rest.vertices.iter().zip(m.template()) {
                worst_template = worst_template.max((*a - *b).norm());
            }
            for row in m.skinning_weights().chunks_exact(k) {
                worst_rows = worst_rows.max((row.iter().sum::<f64>() - 1.0).abs());
            }
            for row in m.joint_regressor().chunks_exact(m.num_vertices()) {
                worst_rows = worst_rows.max((row.iter().sum::<f64>() - 1.0).abs());
            }
            for _ in 0..3 {
                let mut pose = PoseParams((0..k).map(|_| AxisAngle(std::array::from_fn(|_| rng.random_range(-0.6..0.6)))).collect());
                let betas = ShapeParams(std::array::from_fn(|_| rng.random_range(-2.0..2.0)));
                pose.0[0] = AxisAngle::zero();
                let base = m.skin(&pose, &betas);
                let turn = AxisAngle(std::array::from_fn(|_| rng.random_range(-2.0..2.0)));
                pose.0[0] = turn;
                let turned = m.skin(&pose, &betas);
                let r = rodrigues(&turn);
                let root = m.regress_joints(&betas)[0];
                for (a, b) in turned.vertices.iter().zip(&base.vertices).chain(turned.joints.iter().zip(&base.joints)) {
                    worst_equivariance = worst_equivariance.max((*a - (r.rotate(&(*b - root)) + root)).norm());
                }
            }
        }
    }
    verdict(
        worst_template == 0.0 && worst_equivariance < EQUIVARIANCE_TOL && worst_rows < ROW_SUM_TOL,
        format!(
            "{models} models: rest-pose deviation {worst_template:.1e} mm, root equivariance {worst_equivariance:.1e} mm, row sums off by {worst_rows:.1e}"
        ),
    )
}

fn random_rotation(rng: &mut ChaCha8Rng) -> RotationMatrix<f64> {
    let mut g = || -> f64 { StandardNormal.sample(rng) };
    Quaternion::new(g(), g(), g(), g()).normalized().to_rotation()
}

fn frobenius_distance(a: &Mat3<f64>, b: &Mat3<f64>) -> f64 {
    (*a - *b).frobenius()
}

fn rotation_layer(_: &mut Lab) -> Result<Verdict, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut idempotence, mut det, mut fixed) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let r = random_rotation(&mut rng);
        let p = project_to_so3(r.matrix()).map_err(s)?;
        fixed = fixed.max(frobenius_distance(p.matrix(), r.matrix()));
    }
    let samples: Vec<RotationMatrix<f64>> = (0..SO3_ORACLE_SAMPLES).map(|_| random_rotation(&mut rng)).collect();
    let mut oracle_beaten = 0;
    let mut worst_margin = f64::INFINITY;
    for _ in 0..SO3_NOISY_INPUTS {
        let base = random_rotation(&mut rng);
        let noise = Mat3(std::array::from_fn(|_| std::array::from_fn(|_| 0.3 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))));
        let m = *base.matrix() + noise;
        let p = project_to_so3(&m).map_err(s)?;
        let again = project_to_so3(p.matrix()).map_err(s)?;
        idempotence = idempotence.max(frobenius_distance(again.matrix(), p.matrix()));
        det = det.max((p.matrix().det() - 1.0).abs());
        let ours = frobenius_distance(&m, p.matrix());
        let best = samples.iter().map(|q| frobenius_distance(&m, q.matrix())).fold(f64::INFINITY, f64::min);
        worst_margin = worst_margin.min(best - ours);
        if best < ours - SO3_TOL {
            oracle_beaten += 1;
        }
    }
    verdict(
        idempotence < SO3_TOL && det < SO3_TOL && fixed < SO3_TOL && oracle_beaten == 0,
        format!(
            "idempotence {idempotence:.1e}, |det-1| {det:.1e}, fixed point {fixed:.1e}, {oracle_beaten}/{SO3_NOISY_INPUTS} inputs beaten by {SO3_ORACLE_SAMPLES} samples (closest margin {worst_margin:.2e})"
        ),
    )
}

/// Unit-quaternion alignment: the rotation is the top eigenvector of the
/// 4×4 matrix built from the cross-covariance, found by cyclic Jacobi sweeps.
fn quaternion_alignment(pred: &[Vec3<f64>], gt: &[Vec3<f64>]) -> (Mat3<f64>, Vec3<f64>) {
    let n = pred.len() as f64;
    let mp = pred.iter().fold(Vec3::zero(), |a, p| a + *p).scale(1.0 / n);
    let mg = gt.iter().fold(Vec3::zero(), |a, p| a + *p).scale(1.0 / n);
    let mut c = [[0.0; 3]; 3];
    for (p, g) in pred.iter().zip(gt) {
        let (a, b) = (*p - mp, *g - mg);
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] += a.0[i] * b.0[j];
            }
        }
    }
    let [[sxx, sxy, sxz], [syx, syy, syz], [szx, szy, szz]] = c;
    let mut a = [
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ];
    let mut v = [[0.0; 4]; 4];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..100 {
        let off: f64 = (0..4).flat_map(|i| (0..4).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-300 {
            break;
        }
        for p in 0..4 {
            for q in p + 1..4 {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let (cs, sn) = (1.0 / (t * t + 1.0).sqrt(), t / (t * t + 1.0).sqrt());
                for k in 0..4 {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = cs * akp - sn * akq;
                    a[k][q] = sn * akp + cs * akq;
                }
                for k in 0..4 {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = cs * apk - sn * aqk;
                    a[q][k] = sn * apk + cs * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = cs * vp - sn * vq;
                    row[q] = sn * vp + cs * vq;
                }
            }
        }
    }
    let top = (0..4).max_by(|&i, &j| a[i][i].total_cmp(&a[j][j])).expect("four eigenvalues");
    let (w, x, y, z) = (v[0][top], v[1][top], v[2][top], v[3][top]);
    let r = Mat3([
        [w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ]);
    (r, mg - r.mul_vec(&mp))
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3<f64>> {
    (0..n).map(|_| Vec3(std::array::from_fn(|_| rng.random_range(-600.0..600.0)))).collect()
}

fn procrustes(_: &mut Lab) -> Result<Verdict, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut recovery = 0.0f64;
    for _ in 0..PROCRUSTES_PAIRS {
        let pred = random_points(&mut rng, 24);
        let r = random_rotation(&mut rng);
        let t = Vec3(std::array::from_fn(|_| rng.random_range(-2000.0..2000.0)));
        let gt: Vec<Vec3<f64>> = pred.iter().map(|p| r.rotate(p) + t).collect();
        recovery = recovery.max(procrustes_align(&pred, &gt, false).map_err(s)?.residual);
    }
    let mut disagreement = 0.0f64;
    for _ in 0..PROCRUSTES_PAIRS {
        let pred = random_points(&mut rng, 24);
        let gt = random_points(&mut rng, 24);
        let ours = procrustes_align(&pred, &gt, false).map_err(s)?;
        let (r, t) = quaternion_alignment(&pred, &gt);
        for (a, p) in ours.aligned.iter().zip(&pred) {
            disagreement = disagreement.max((*a - (r.mul_vec(p) + t)).norm());
        }
        disagreement = disagreement.max((ours.rotation - r).max_abs());
    }
    verdict(
        recovery < PROCRUSTES_RECOVERY_TOL && disagreement < PROCRUSTES_ORACLE_TOL,
        format!("recovery residual {recovery:.1e} mm, oracle disagreement {disagreement:.1e} over {PROCRUSTES_PAIRS} pairs"),
    )
}

fn fitting_recovery(lab: &mut Lab) -> Result<Verdict, String> {
    let spec = DatasetSpec { examples: FIT_EXAMPLES, seed: 5, difficulty: DIFFICULTY, ..Default::default() };
    let data = Dataset::generate(&spec, RunManifest::new("gen", spec.seed, "")).map_err(s)?;
    let model = lab.model()?;
    let only_3d = AnnotationMask { latent: false, joints_3d: true, joints_2d: false };
    let items: Vec<FitItem> = data
        .examples
        .iter()
        .map(|e| FitItem {
            targets: e.targets(),
            mask: only_3d,
            truth: Some((e.pose.as_ref().expect("labelled").to_rotations(), e.joints_3d.clone().expect("labelled"))),
            init: None,
        })
        .collect();
    let config = FitConfig { max_iterations: FIT_ITERATIONS, init: InitMode::PerturbedGroundTruth { sigma: FIT_SIGMA }, ..Default::default() };
    let start = Instant::now();
    let batch = fit_batch(&model, &lab.camera, &items, &config);
    let elapsed = start.elapsed();
    let failures = batch.results.iter().filter(|r| r.is_err()).count();
    let summary = batch.report.summary.ok_or("no example fitted")?;
    verdict(
        failures == 0 && summary.e_joints.mean < FIT_MAX_MEAN_MM && elapsed < FIT_BUDGET,
        format!(
            "mean e_joints {:.2} mm (median {:.2}) over {} examples, {failures} failures",
            summary.e_joints.mean, summary.e_joints.median, batch.report.count
        ),
    )
}

fn loss_ablation(lab: &mut Lab) -> Result<Verdict, String> {
    let start = Instant::now();
    let latent = TrainConfig { terms: AnnotationMask { latent: true, joints_3d: false, joints_2d: false }, ..Default::default() };
    let only_2d = TrainConfig { terms: AnnotationMask::ONLY_2D, ..Default::default() };
    let net = lab.train(12, &latent)?;
    let a = lab.val_summary(&net, 12)?;
    let net = lab.train(12, &only_2d)?;
    let b = lab.val_summary(&net, 12)?;
    let ratio = b.e_quat.mean / a.e_quat.mean;
    let gap = (b.pckh.mean - a.pckh.mean).abs();
    verdict(
        ratio > ABLATION_QUAT_RATIO && gap <= ABLATION_PCKH_POINTS && start.elapsed() < ABLATION_BUDGET,
        format!(
            "latent: e_quat {:.3} rad, PCKh {:.1}; 2D only: e_quat {:.3} rad, PCKh {:.1}; ratio {ratio:.2} (need > {ABLATION_QUAT_RATIO}), PCKh gap {gap:.1} (need <= {ABLATION_PCKH_POINTS})",
            a.e_quat.mean, a.pckh.mean, b.e_quat.mean, b.pckh.mean
        ),
    )
}

fn supervision_fraction(lab: &mut Lab) -> Result<Verdict, String> {
    let dir = lab.dir.path().join("sweep");
    let (train_path, val_path, out) = (dir.join("train.jsonl"), dir.join("val.jsonl"), dir.join("sweep.csv"));
    let (n_train, n_val) = (TRAIN_EXAMPLES.to_string(), VAL_EXAMPLES.to_string());
    let difficulty = DIFFICULTY.to_string();
    let start = Instant::now();
    for (path, n, seed) in [(&train_path, &n_train, TRAIN_SEED), (&val_path, &n_val, VAL_SEED)] {
        run_cli(&["--seed", &seed.to_string(), "--out", path_str(path), "gen", "-n", n, "--difficulty", &difficulty])?;
    }
    let fractions = SWEEP_FRACTIONS.map(|f| f.to_string()).join(",");
    run_cli(&["--out", path_str(&out), "sweep", "--dataset", path_str(&train_path), "--val", path_str(&val_path), "--fractions", &fractions])?;
    let elapsed = start.elapsed();
    let text = std::fs::read_to_string(&out).map_err(s)?;
    let mut rows = std::collections::HashMap::new();
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let num = |i: usize| f.get(i).and_then(|v| v.parse::<f64>().ok());
        let (Some(fraction), Some(ej), Some(eq)) = (num(0), num(1), num(2)) else {
            return Err(format!("sweep row without results: {line}"));
        };
        rows.insert(fraction.to_bits(), (ej, eq));
    }
    let at = |f: f64| rows.get(&f.to_bits()).copied().ok_or(format!("no sweep row for {f}"));
    let ((ej_full, _), (ej_20, eq_20), (_, eq_none)) = (at(1.0)?, at(0.2)?, at(0.0)?);
    let joint_change = (ej_20 - ej_full).abs() / ej_full;
    let quat_ratio = eq_none / eq_20;
    let table: Vec<String> = SWEEP_FRACTIONS.iter().filter_map(|&f| at(f).ok().map(|(j, q)| format!("{f}: {j:.1} mm/{q:.3} rad"))).collect();
    verdict(
        joint_change <= SWEEP_JOINT_SLACK && quat_ratio > SWEEP_QUAT_RATIO && elapsed < SWEEP_BUDGET,
        format!(
            "e_joints(0.2) {:.1}% from e_joints(1.0) (need <= {:.0}%), e_quat(0)/e_quat(0.2) {quat_ratio:.2} (need > {SWEEP_QUAT_RATIO}); {}",
            100.0 * joint_change,
            100.0 * SWEEP_JOINT_SLACK,
            table.join(", ")
        ),
    )
}

fn granularity(lab: &mut Lab) -> Result<Verdict, String> {
    let mut errors = Vec::new();
    for p in [1, 12, 24] {
        let net = lab.full_net(p)?;
        errors.push(lab.val_summary(&net, p)?.e_joints.mean);
    }
    let (silhouette, twelve, full) = (errors[0], errors[1], errors[2]);
    let gain = (silhouette - twelve) / silhouette;
    let spread = (twelve - full).abs() / twelve.min(full);
    verdict(
        gain >= GRANULARITY_GAIN && spread <= GRANULARITY_PLATEAU,
        format!(
            "val e_joints P=1 {silhouette:.1} mm, P=12 {twelve:.1} mm, P=24 {full:.1} mm; gain {:.0}% (need >= {:.0}%), P=12 vs P=24 {:.0}% apart (need <= {:.0}%)",
            100.0 * gain,
            100.0 * GRANULARITY_GAIN,
            100.0 * spread,
            100.0 * GRANULARITY_PLATEAU
        ),
    )
}

fn segmentation_quality(lab: &mut Lab) -> Result<Verdict, String> {
    let net = lab.full_net(12)?;
    let model = lab.model()?;
    let (mut f1s, mut errors, mut means) = (Vec::new(), Vec::new(), Vec::new());
    for rate in CORRUPTION_RATES {
        let spec = Lab::val_spec(12, rate);
        let data = Dataset::generate(&spec, RunManifest::new("gen", spec.seed, "")).map_err(s)?;
        let examples: Vec<TrainExample<f64>> = data.examples.iter().map(TrainExample::from_annotated).collect();
        let evaluation = evaluate(&net, &examples, &model, &lab.camera).map_err(s)?;
        for (e, m) in data.examples.iter().zip(&evaluation.per_example) {
            let m = m.ok_or("validation example without ground truth")?;
            f1s.push(e.f1);
            errors.push(m.e_joints);
        }
        means.push(evaluation.report.summary.ok_or("empty report")?.e_joints.mean);
    }
    let monotone = means.windows(2).all(|w| w[1] > w[0]);
    let rho = spearman(&f1s, &errors).ok_or("rank correlation undefined")?;
    let listed: Vec<String> = CORRUPTION_RATES.iter().zip(&means).map(|(r, m)| format!("{r}: {m:.1} mm")).collect();
    verdict(
        monotone && rho < CORRUPTION_MAX_RHO,
        format!("mean e_joints by rate {}; Spearman(F1, e_joints) {rho:.3} over {} pairs (need < {CORRUPTION_MAX_RHO})", listed.join(", "), f1s.len()),
    )
}

/// Runs the command set into `dir`; returns the artifacts written.
fn pipeline(dir: &Path) -> Result<Vec<PathBuf>, String> {
    std::fs::create_dir_all(dir).map_err(s)?;
    let p = |name: &str| dir.join(name);
    let (data, val, ckpt, preds) = (p("data.jsonl"), p("val.jsonl"), p("net.json"), p("fit.jsonl"));
    let small = ["gen", "-n", "24", "--vertices", "400", "--grid", "16", "--parts", "6", "--labelled-fraction", "0.5", "--mirror", "--corruption", "0.1"];
    let mut gen_data = vec!["--seed", "4", "--out", path_str(&data)];
    gen_data.extend(small);
    run_cli(&gen_data)?;
    let mut gen_val = vec!["--seed", "5", "--out", path_str(&val)];
    gen_val.extend(small);
    run_cli(&gen_val)?;
    run_cli(&["--seed", "6", "--out", path_str(&ckpt), "train", "--dataset", path_str(&data), "--val", path_str(&val), "--epochs", "2"])?;
    run_cli(&["--seed", "7", "--out", path_str(&preds), "fit", "--dataset", path_str(&val), "--loss", "2d+3d", "--iterations", "40"])?;
    run_cli(&["--out", path_str(&p("eval_fit.csv")), "eval", "--dataset", path_str(&val), "--predictions", path_str(&preds)])?;
    run_cli(&["--out", path_str(&p("eval_net.csv")), "eval", "--dataset", path_str(&val), "--checkpoint", path_str(&ckpt)])?;
    run_cli(&["--seed", "8", "--out", path_str(&p("sweep.csv")), "sweep", "--dataset", path_str(&data), "--val", path_str(&val), "--fractions", "1,0.5,0", "--epochs", "1"])?;
    run_cli(&["--seed", "9", "--out", path_str(&p("gradcheck.json")), "gradcheck", "--configs", "2"])?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir).map_err(s)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>().map_err(s)?;
    files.sort();
    Ok(files)
}

/// Re-creates a command's config file from the manifest it recorded.
fn config_from_manifest(manifest: &serde_json::Value, section: &str, path: &Path) -> Result<String, String> {
    let config: serde_json::Value = serde_json::from_str(manifest["config"].as_str().ok_or("manifest has no config")?).map_err(s)?;
    std::fs::write(path, serde_json::json!({ section: config }).to_string()).map_err(s)?;
    Ok(manifest["seed"].as_u64().ok_or("manifest has no seed")?.to_string())
}

fn determinism(lab: &mut Lab) -> Result<Verdict, String> {
    let root = lab.dir.path().join("determinism");
    let first = pipeline(&root.join("a"))?;
    let second = pipeline(&root.join("b"))?;
    let mut differing = Vec::new();
    for (a, b) in first.iter().zip(&second) {
        if std::fs::read(a).map_err(s)? != std::fs::read(b).map_err(s)? {
            differing.push(a.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
        }
    }

    // Replay generation and training from nothing but their manifests.
    let a = root.join("a");
    let replay = root.join("replay");
    std::fs::create_dir_all(&replay).map_err(s)?;
    let header: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(a.join("data.jsonl")).map_err(s)?.lines().next().ok_or("empty dataset")?).map_err(s)?;
    let seed = config_from_manifest(&header["manifest"], "gen", &replay.join("gen.json"))?;
    run_cli(&["--seed", &seed, "--config", path_str(&replay.join("gen.json")), "--out", path_str(&replay.join("data.jsonl")), "gen"])?;
    let checkpoint: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("net.json")).map_err(s)?).map_err(s)?;
    let seed = config_from_manifest(&checkpoint["manifest"], "train", &replay.join("train.json"))?;
    run_cli(&[
        "--seed",
        &seed,
        "--config",
        path_str(&replay.join("train.json")),
        "--out",
        path_str(&replay.join("net.json")),
        "train",
        "--dataset",
        path_str(&replay.join("data.jsonl")),
        "--val",
        path_str(&a.join("val.jsonl")),
    ])?;
    for name in ["data.jsonl", "net.json", "net.json.log.csv"] {
        if std::fs::read(a.join(name)).map_err(s)? != std::fs::read(replay.join(name)).map_err(s)? {
            differing.push(format!("{name} (replayed from manifest)"));
        }
    }
    verdict(
        first.len() == second.len() && differing.is_empty(),
        format!("{} artifacts compared across two runs plus a manifest replay; differing: {:?}", first.len(), differing),
    )
}
