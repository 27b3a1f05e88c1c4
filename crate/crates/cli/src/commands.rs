use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, ensure, Context};
use bodyfit::body_model::{generate_desk_model, model_hash, BodyModel, PoseParams, ShapeParams};
use bodyfit::camera::Camera;
use bodyfit::fitter::{fit_batch, FitItem, InitMode};
use bodyfit::manifest::{sha256_hex, RunManifest};
use bodyfit::metrics::{evaluate_example, ExampleMetrics, MetricsReport};
use bodyfit::regressor::{
    chain_gradcheck, evaluate, supervision_sweep, train, write_sweep_csv, ChainCheck, Checkpoint, RegressorNet, Split, TrainExample,
    CHAIN_MODEL_VERTICES,
};
use bodyfit::synth::{build_dataset, AnnotatedExample, Dataset};
use serde::{Deserialize, Serialize};

use crate::config::{self, FileConfig};
use crate::output::{csv_with_manifest, required_out, sibling, unix_time, write_file};
use crate::{Cli, Command, EvalArgs, FitArgs, GenArgs, GradcheckArgs, SweepArgs, TrainArgs};

pub const PREDICTIONS_FORMAT: &str = "bodyfit-predictions";
const PNG_SCALE: usize = 8;

pub fn run(cli: &Cli) -> anyhow::Result<ExitCode> {
    let file = config::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Gen(a) => gen(cli, file, a),
        Command::Train(a) => train_cmd(cli, file, a),
        Command::Sweep(a) => sweep(cli, file, a),
        Command::Fit(a) => fit(cli, file, a),
        Command::Eval(a) => eval(cli, a),
        Command::Gradcheck(a) => gradcheck(cli, file, a),
    }
}

fn manifest<C: Serialize>(cli: &Cli, command: &str, seed: u64, model_hash: &str, config: &C) -> anyhow::Result<RunManifest> {
    let mut m = RunManifest::new(command, seed, model_hash);
    m.config = Some(serde_json::to_string(config)?);
    if cli.timestamp {
        m.timestamp = Some(unix_time());
    }
    Ok(m)
}

/// A dataset file with the hash of its exact bytes.
struct Loaded {
    dataset: Dataset,
    hash: String,
}

fn load_dataset(path: &Path) -> anyhow::Result<Loaded> {
    let bytes = fs::read(path).with_context(|| format!("reading dataset {}", path.display()))?;
    let dataset = Dataset::read_jsonl(&bytes[..]).with_context(|| format!("parsing dataset {}", path.display()))?;
    Ok(Loaded { dataset, hash: sha256_hex(&bytes) })
}

fn train_examples(d: &Dataset) -> Vec<TrainExample<f64>> {
    d.examples.iter().map(TrainExample::from_annotated).collect()
}

fn gen(cli: &Cli, file: FileConfig, a: &GenArgs) -> anyhow::Result<ExitCode> {
    let out = required_out(&cli.out)?;
    let mut spec = file.gen;
    macro_rules! set {
        ($($field:ident = $value:expr),*) => { $(if let Some(v) = $value { spec.$field = v; })* };
    }
    set!(
        seed = cli.seed,
        model_seed = a.model_seed,
        vertices = a.vertices,
        examples = a.examples,
        grid_size = a.grid,
        granularity = a.parts,
        corruption = a.corruption,
        labelled_fraction = a.labelled_fraction,
        difficulty = a.difficulty
    );
    spec.mirror |= a.mirror;
    spec.validate()?;
    let model = spec.model()?;
    let m = manifest(cli, "gen", spec.seed, &model_hash(&model), &spec)?;
    let dataset = build_dataset(&spec, &model, &bodyfit::camera::default_camera(), m)?;
    let bytes = dataset.to_bytes();
    write_file(out, &bytes)?;
    if let Some(dir) = &a.png_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for e in dataset.examples.iter().take(a.png_count) {
            let mut buf = Vec::new();
            e.grid.write_png(&mut buf, PNG_SCALE)?;
            write_file(&dir.join(format!("grid_{:05}.png", e.index)), &buf)?;
        }
    }
    println!("wrote {} examples to {} (sha256 {})", dataset.examples.len(), out.display(), sha256_hex(&bytes));
    Ok(ExitCode::SUCCESS)
}

fn train_cmd(cli: &Cli, file: FileConfig, a: &TrainArgs) -> anyhow::Result<ExitCode> {
    let out = required_out(&cli.out)?;
    let mut cfg = file.train;
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.adam.learning_rate = v;
    }
    if let Some(v) = &a.loss {
        cfg.terms = config::parse_terms(v)?;
    }
    if let Some(v) = a.labelled_fraction {
        cfg.labelled_fraction = v;
    }
    cfg.validate()?;

    let data = load_dataset(&a.dataset)?;
    let model = data.dataset.model()?;
    let val = match &a.val {
        Some(p) => {
            let v = load_dataset(p)?;
            ensure!(v.dataset.header.model_hash == data.dataset.header.model_hash, "validation set uses a different body model");
            train_examples(&v.dataset)
        }
        None => Vec::new(),
    };
    let spec = &data.dataset.header.spec;
    let camera = data.dataset.header.camera;
    let net = RegressorNet::new(spec.grid_size, spec.granularity, &cfg.hidden, cfg.seed)?;
    let trained = train(net, &train_examples(&data.dataset), &val, &model, &camera, &cfg)?;

    let mut m = manifest(cli, "train", cfg.seed, &data.dataset.header.model_hash, &cfg)?;
    m.dataset_hash = Some(data.hash);
    let checkpoint = Checkpoint::new(&trained.net, &cfg, m.clone());
    write_file(out, checkpoint.to_json().as_bytes())?;
    let mut log = Vec::new();
    trained.log.write_csv(&mut log)?;
    let log_path = a.log.clone().unwrap_or_else(|| sibling(out, ".log.csv"));
    write_file(&log_path, &csv_with_manifest(&m, &log))?;

    for split in [Split::Train, Split::Val] {
        if let Some(r) = trained.log.last(split) {
            let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
            println!(
                "epoch {} {:?}: loss {:.4}, e_joints {} mm, e_quat {} rad, PCKh {} %",
                r.epoch,
                split,
                r.loss_total,
                f(r.e_joints_mm),
                f(r.e_quat_rad),
                f(r.pckh_pct)
            );
        }
    }
    println!("wrote checkpoint {} and log {}", out.display(), log_path.display());
    Ok(ExitCode::SUCCESS)
}

fn sweep(cli: &Cli, file: FileConfig, a: &SweepArgs) -> anyhow::Result<ExitCode> {
    let out = required_out(&cli.out)?;
    let mut cfg = file.train;
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    let fractions = a.fractions.clone().unwrap_or(file.sweep.fractions);
    cfg.validate()?;

    let data = load_dataset(&a.dataset)?;
    let val = load_dataset(&a.val)?;
    ensure!(val.dataset.header.model_hash == data.dataset.header.model_hash, "validation set uses a different body model");
    let model = data.dataset.model()?;
    let camera = data.dataset.header.camera;
    let rows = supervision_sweep(&train_examples(&data.dataset), &train_examples(&val.dataset), &model, &camera, &cfg, &fractions)?;

    #[derive(Serialize)]
    struct SweepConfig<'a> {
        train: &'a bodyfit::regressor::TrainConfig,
        fractions: &'a [f64],
        val_hash: &'a str,
    }
    let mut m = manifest(cli, "sweep", cfg.seed, &data.dataset.header.model_hash, &SweepConfig { train: &cfg, fractions: &fractions, val_hash: &val.hash })?;
    m.dataset_hash = Some(data.hash);
    let mut body = Vec::new();
    write_sweep_csv(&rows, &mut body)?;
    write_file(out, &csv_with_manifest(&m, &body))?;

    println!("{:>10}{:>14}{:>14}{:>10}", "labelled", "e_joints mm", "e_quat rad", "PCKh %");
    for r in &rows {
        match &r.outcome {
            Ok(s) => println!("{:>10.2}{:>14.2}{:>14.3}{:>10.1}", r.fraction, s.e_joints.mean, s.e_quat.mean, s.pckh.mean),
            Err(e) => println!("{:>10.2}  failed: {e}", r.fraction),
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// First line of a predictions file.
#[derive(Debug, Serialize, Deserialize)]
struct PredictionsHeader {
    format: String,
    manifest: RunManifest,
    model_hash: String,
    dataset_hash: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum PredictionLine {
    Fitted { index: usize, pose: PoseParams<f64>, betas: ShapeParams<f64>, converged: bool, iterations: usize, final_loss: f64 },
    Failed { index: usize, error: String },
}

fn fit(cli: &Cli, file: FileConfig, a: &FitArgs) -> anyhow::Result<ExitCode> {
    let out = required_out(&cli.out)?;
    let mut cfg = file.fit;
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.iterations {
        cfg.max_iterations = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.adam.learning_rate = v;
    }
    if a.zero_init {
        cfg.init = InitMode::Zero;
    }
    if let Some(sigma) = a.sigma {
        cfg.init = InitMode::PerturbedGroundTruth { sigma };
    }
    cfg.validate()?;
    let terms = config::parse_terms(a.loss.as_deref().unwrap_or("all"))?;

    let data = load_dataset(&a.dataset)?;
    let model = data.dataset.model()?;
    let camera = data.dataset.header.camera;
    let items: Vec<FitItem> = data
        .dataset
        .examples
        .iter()
        .map(|e| FitItem { targets: e.targets(), mask: e.mask.intersect(&terms), truth: truth(e), init: None })
        .collect();
    let batch = fit_batch(&model, &camera, &items, &cfg);

    #[derive(Serialize)]
    struct FitRun<'a> {
        fit: &'a bodyfit::fitter::FitConfig,
        terms: &'a bodyfit::losses::AnnotationMask,
    }
    let mut m = manifest(cli, "fit", cfg.seed, &data.dataset.header.model_hash, &FitRun { fit: &cfg, terms: &terms })?;
    m.dataset_hash = Some(data.hash.clone());
    let header = PredictionsHeader {
        format: PREDICTIONS_FORMAT.into(),
        manifest: m.clone(),
        model_hash: data.dataset.header.model_hash.clone(),
        dataset_hash: data.hash,
    };
    let mut body = serde_json::to_string(&header)? + "\n";
    let mut failures = 0;
    for (e, r) in data.dataset.examples.iter().zip(batch.results) {
        let line = match r {
            Ok(r) => PredictionLine::Fitted {
                index: e.index,
                final_loss: r.final_loss(),
                pose: r.pose,
                betas: r.betas,
                converged: r.converged,
                iterations: r.iterations,
            },
            Err(err) => {
                failures += 1;
                PredictionLine::Failed { index: e.index, error: err.to_string() }
            }
        };
        body += &(serde_json::to_string(&line)? + "\n");
    }
    write_file(out, body.as_bytes())?;
    let mut csv = Vec::new();
    batch.report.write_csv(&mut csv)?;
    let report_path = a.report.clone().unwrap_or_else(|| sibling(out, ".report.csv"));
    write_file(&report_path, &csv_with_manifest(&m, &csv))?;

    print!("{}", batch.report.to_table());
    if failures > 0 {
        eprintln!("{failures} of {} examples failed to fit (see {})", items.len(), out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn truth(e: &AnnotatedExample) -> Option<(bodyfit::body_model::RotationSet<f64>, Vec<bodyfit::linalg::Vec3<f64>>)> {
    Some((e.pose.as_ref()?.to_rotations(), e.joints_3d.clone()?))
}

fn read_predictions(path: &Path, dataset: &Dataset, parts: usize) -> anyhow::Result<HashMap<usize, (PoseParams<f64>, ShapeParams<f64>)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading predictions {}", path.display()))?;
    let mut lines = text.lines();
    let header: PredictionsHeader = serde_json::from_str(lines.next().context("empty predictions file")?).context("parsing predictions header")?;
    ensure!(header.format == PREDICTIONS_FORMAT, "not a predictions file (format {:?})", header.format);
    ensure!(
        header.model_hash == dataset.header.model_hash,
        "predictions were made with body model {} but the dataset uses {}",
        header.model_hash,
        dataset.header.model_hash
    );
    let mut out = HashMap::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        match serde_json::from_str(line).with_context(|| format!("predictions line {}", n + 2))? {
            PredictionLine::Fitted { index, pose, betas, .. } => {
                ensure!(pose.len() == parts, "prediction {index} has {} parts, the model has {parts}", pose.len());
                out.insert(index, (pose, betas));
            }
            PredictionLine::Failed { .. } => {}
        }
    }
    Ok(out)
}

fn score(
    model: &BodyModel<f64>,
    camera: &Camera<f64>,
    e: &AnnotatedExample,
    rotations: &bodyfit::body_model::RotationSet<f64>,
    betas: &ShapeParams<f64>,
) -> anyhow::Result<Option<ExampleMetrics>> {
    let Some((gt_r, gt_j)) = truth(e) else { return Ok(None) };
    let joints = model.pose_joints(rotations, betas).pose.joints;
    Ok(Some(evaluate_example(camera, &joints, rotations, &gt_j, &gt_r)?))
}

fn eval(cli: &Cli, a: &EvalArgs) -> anyhow::Result<ExitCode> {
    let data = load_dataset(&a.dataset)?;
    let model = data.dataset.model()?;
    let camera = data.dataset.header.camera;
    let (report, source_hash, skipped) = if let Some(path) = &a.checkpoint {
        let text = fs::read_to_string(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        let checkpoint = Checkpoint::from_json(&text)?;
        let net = checkpoint.net()?;
        let spec = &data.dataset.header.spec;
        ensure!(
            net.grid_size() == spec.grid_size && net.granularity() == spec.granularity,
            "checkpoint expects {}x{} grids with {} parts, dataset has {}x{} with {}",
            net.grid_size(),
            net.grid_size(),
            net.granularity(),
            spec.grid_size,
            spec.grid_size,
            spec.granularity
        );
        let evaluation = evaluate(&net, &train_examples(&data.dataset), &model, &camera)?;
        let skipped = evaluation.per_example.iter().filter(|m| m.is_none()).count();
        (evaluation.report, sha256_hex(text.as_bytes()), skipped)
    } else {
        let path = a.predictions.as_ref().expect("clap requires predictions or checkpoint");
        let predictions = read_predictions(path, &data.dataset, model.num_parts())?;
        let mut rows = Vec::new();
        let mut skipped = 0;
        for e in &data.dataset.examples {
            let row = match predictions.get(&e.index) {
                Some((pose, betas)) => score(&model, &camera, e, &pose.to_rotations(), betas)?,
                None => None,
            };
            match row {
                Some(r) => rows.push(r),
                None => skipped += 1,
            }
        }
        (MetricsReport::new(rows), sha256_hex(&fs::read(path)?), skipped)
    };

    print!("{}", report.to_table());
    if skipped > 0 {
        eprintln!("{skipped} examples skipped (no prediction or no 3D ground truth)");
    }
    if let Some(out) = &cli.out {
        #[derive(Serialize)]
        struct EvalRun<'a> {
            source_hash: &'a str,
        }
        let mut m = manifest(cli, "eval", cli.seed.unwrap_or(0), &data.dataset.header.model_hash, &EvalRun { source_hash: &source_hash })?;
        m.dataset_hash = Some(data.hash);
        let mut csv = Vec::new();
        report.write_csv(&mut csv)?;
        write_file(out, &csv_with_manifest(&m, &csv))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(cli: &Cli, file: FileConfig, a: &GradcheckArgs) -> anyhow::Result<ExitCode> {
    if !(a.tol > 0.0) {
        bail!("--tol must be positive");
    }
    let seed = cli.seed.unwrap_or(0);
    let configs = a.configs.unwrap_or(file.gradcheck.configs);
    let step = a.step.unwrap_or(file.gradcheck.step);
    ensure!(configs > 0, "--configs must be positive");
    let checks = chain_gradcheck(seed, configs, step)?;
    let worst = checks.iter().map(|c| c.report.max_relative_error).fold(0.0, f64::max);

    println!("{:>7}  {:<14}{:>14}{:>8}", "config", "term", "max rel err", "coords");
    for c in &checks {
        println!("{:>7}  {:<14}{:>14.3e}{:>8}", c.configuration, c.term.name(), c.report.max_relative_error, c.report.coordinates);
    }
    let passed = worst < a.tol;
    println!("worst {worst:.3e} over {} checks: {}", checks.len(), if passed { "PASS" } else { "FAIL" });

    if let Some(out) = &cli.out {
        #[derive(Serialize)]
        struct Settings {
            configs: usize,
            step: f64,
            tol: f64,
        }
        #[derive(Serialize)]
        struct Report<'a> {
            manifest: RunManifest,
            worst: f64,
            passed: bool,
            checks: &'a [ChainCheck],
        }
        let model = generate_desk_model(seed, CHAIN_MODEL_VERTICES)?;
        let m = manifest(cli, "gradcheck", seed, &model_hash(&model), &Settings { configs, step, tol: a.tol })?;
        write_file(out, serde_json::to_string_pretty(&Report { manifest: m, worst, passed, checks: &checks })?.as_bytes())?;
    }
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
