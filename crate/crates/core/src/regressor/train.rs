use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::RegressorNet;
use crate::body_model::{BodyModel, RotationSet};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::losses::{AnnotationMask, LossWeights, Objective, Targets};
use crate::metrics::{evaluate_example, ExampleMetrics, MetricsReport, Summary};
use crate::optim::{Adam, AdamConfig, Schedule};
use crate::scalar::Real;
use crate::synth::{assign_masks, AnnotatedExample, PartSegGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub adam: AdamConfig,
    pub schedule: Schedule,
    pub seed: u64,
    pub weights: LossWeights,
    /// Loss terms training may use at all.
    pub terms: AnnotationMask,
    /// Share of examples (seeded choice) keeping latent and 3D labels; the
    /// rest train on 2D joints only.
    pub labelled_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 16,
            hidden: vec![256, 256],
            adam: AdamConfig { learning_rate: 3e-4, ..AdamConfig::default() },
            schedule: Schedule::Linear { final_fraction: 0.1 },
            seed: 0,
            // brings the three terms to a similar size at the start of training
            weights: LossWeights { latent: 1.0, joints_3d: 1e-3, joints_2d: 1e-2 },
            terms: AnnotationMask::ALL,
            labelled_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.labelled_fraction) {
            return Err(Error::InvalidArgument(format!("labelled fraction {} outside [0, 1]", self.labelled_fraction)));
        }
        if self.terms.is_empty() {
            return Err(Error::EmptyMask);
        }
        Ok(())
    }
}

/// A grid with every annotation the source example carries.
#[derive(Clone, Debug)]
pub struct TrainExample<T> {
    pub grid: PartSegGrid,
    pub targets: Targets<T>,
    pub mask: AnnotationMask,
}

impl<T: Real> TrainExample<T> {
    pub fn from_annotated(e: &AnnotatedExample) -> Self {
        let t = e.targets();
        let c = |v: &Vec3<f64>| Vec3::new(T::of(v.x()), T::of(v.y()), T::of(v.z()));
        TrainExample {
            grid: e.grid.clone(),
            targets: Targets {
                rotations: t.rotations.map(|r| RotationSet(r.0.iter().map(|m| m.cast()).collect())),
                betas: t.betas.map(|b| crate::body_model::ShapeParams(b.0.map(T::of))),
                joints_3d: t.joints_3d.map(|j| j.iter().map(c).collect()),
                joints_2d: t.joints_2d.map(|j| j.iter().map(|p| [T::of(p[0]), T::of(p[1])]).collect()),
            },
            mask: e.mask,
        }
    }

    /// Ground truth needed for the evaluation measures.
    fn truth(&self) -> Option<(&RotationSet<T>, &[Vec3<T>])> {
        Some((self.targets.rotations.as_ref()?, self.targets.joints_3d.as_deref()?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

/// One line of the training log. Metric columns are `None` when no example
/// in the split has ground truth; loss-term columns average over the
/// examples where the term was active.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub epoch: usize,
    pub split: Split,
    pub e_joints_mm: Option<f64>,
    pub e_quat_rad: Option<f64>,
    pub pckh_pct: Option<f64>,
    pub loss_latent: Option<f64>,
    pub loss_joints_3d: Option<f64>,
    pub loss_joints_2d: Option<f64>,
    pub loss_total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn last(&self, split: Split) -> Option<&LogRow> {
        self.rows.iter().rev().find(|r| r.split == split)
    }
}

#[derive(Default)]
struct EpochStats {
    metrics: Vec<ExampleMetrics>,
    terms: [(f64, usize); 3],
    total: f64,
    count: usize,
}

impl EpochStats {
    fn add(&mut self, mask: AnnotationMask, terms: crate::losses::TermValues, total: f64) {
        for (slot, (on, v)) in self.terms.iter_mut().zip([(mask.latent, terms.latent), (mask.joints_3d, terms.joints_3d), (mask.joints_2d, terms.joints_2d)]) {
            if on {
                slot.0 += v;
                slot.1 += 1;
            }
        }
        self.total += total;
        self.count += 1;
    }

    fn row(self, epoch: usize, split: Split) -> LogRow {
        let summary = MetricsReport::new(self.metrics).summary;
        let term = |(sum, n): (f64, usize)| (n > 0).then(|| sum / n as f64);
        LogRow {
            epoch,
            split,
            e_joints_mm: summary.as_ref().map(|s| s.e_joints.mean),
            e_quat_rad: summary.as_ref().map(|s| s.e_quat.mean),
            pckh_pct: summary.as_ref().map(|s| s.pckh.mean),
            loss_latent: term(self.terms[0]),
            loss_joints_3d: term(self.terms[1]),
            loss_joints_2d: term(self.terms[2]),
            loss_total: if self.count > 0 { self.total / self.count as f64 } else { 0.0 },
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trained<T> {
    pub net: RegressorNet<T>,
    pub log: TrainLog,
}

/// Per-example training masks after the term filter and labelled-fraction draw.
pub fn training_masks<T: Real>(examples: &[TrainExample<T>], config: &TrainConfig) -> Result<Vec<AnnotationMask>> {
    let assigned = assign_masks(examples.len(), config.labelled_fraction, config.seed)?;
    examples
        .iter()
        .zip(assigned)
        .enumerate()
        .map(|(i, (e, a))| {
            let m = e.mask.intersect(&config.terms).intersect(&a);
            if m.is_empty() {
                Err(Error::InvalidArgument(format!("training example {i} has no usable annotation")))
            } else {
                Ok(m)
            }
        })
        .collect()
}

fn metrics_for<T: Real>(
    model: &BodyModel<T>,
    camera: &Camera<T>,
    example: &TrainExample<T>,
    rotations: &RotationSet<T>,
    betas: &crate::body_model::ShapeParams<T>,
) -> Result<Option<ExampleMetrics>> {
    let Some((gt_r, gt_j)) = example.truth() else { return Ok(None) };
    let joints = model.pose_joints(rotations, betas).pose.joints;
    evaluate_example(camera, &joints, rotations, gt_j, gt_r).map(Some)
}

/// Mini-batch Adam over the network weights, back-propagating each
/// example's loss through the SVD projection and the body model. Examples
/// are visited in a seeded order and gradients summed in that order, so
/// equal seeds give bit-identical nets.
pub fn train<T: Real>(
    mut net: RegressorNet<T>,
    train_set: &[TrainExample<T>],
    val_set: &[TrainExample<T>],
    model: &BodyModel<T>,
    camera: &Camera<T>,
    config: &TrainConfig,
) -> Result<Trained<T>> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let masks = training_masks(train_set, config)?;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let batches_per_epoch = train_set.len().div_ceil(config.batch_size);
    let total_steps = batches_per_epoch * config.epochs;
    let mut adam = Adam::new(net.params().len(), config.adam);
    let mut grad = vec![T::zero(); net.params().len()];
    let mut log = TrainLog::default();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut stats = EpochStats::default();
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = T::zero());
            let scale = T::one() / T::of_usize(batch.len());
            for &i in batch {
                let ex = &train_set[i];
                let (fwd, decoded) = net.decode(&ex.grid)?;
                let objective = Objective::new(model, camera, masks[i], config.weights);
                let (value, terms, model_grad) = objective.evaluate_rotations(&decoded.rotations, &decoded.betas, &ex.targets)?;
                if !value.is_finite() {
                    return Err(Error::Diverged { iteration: adam.steps() });
                }
                let d_raw: Vec<T> = decoded.backward(&model_grad).into_iter().map(|g| g * scale).collect();
                net.backward(&fwd, &d_raw, &mut grad);
                stats.add(masks[i], terms, value.to_f64_lossy());
                if let Some(m) = metrics_for(model, camera, ex, &decoded.rotations, &decoded.betas)? {
                    stats.metrics.push(m);
                }
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { iteration: adam.steps() });
            }
            let factor = config.schedule.factor(adam.steps(), total_steps);
            adam.step(net.params_mut(), &grad, factor);
        }
        log.rows.push(stats.row(epoch, Split::Train));
        if !val_set.is_empty() {
            log.rows.push(validation_row(&net, val_set, model, camera, config, epoch)?);
        }
    }
    Ok(Trained { net, log })
}

fn validation_row<T: Real>(
    net: &RegressorNet<T>,
    val_set: &[TrainExample<T>],
    model: &BodyModel<T>,
    camera: &Camera<T>,
    config: &TrainConfig,
    epoch: usize,
) -> Result<LogRow> {
    let per_example: Vec<_> = val_set
        .par_iter()
        .map(|ex| -> Result<_> {
            let (rots, betas) = net.predict(&ex.grid)?;
            let mask = ex.mask.intersect(&config.terms);
            let loss = if mask.is_empty() {
                None
            } else {
                Some((mask, Objective::new(model, camera, mask, config.weights).evaluate_rotations(&rots, &betas, &ex.targets)?))
            };
            Ok((loss, metrics_for(model, camera, ex, &rots, &betas)?))
        })
        .collect::<Result<_>>()?;
    let mut stats = EpochStats::default();
    for (loss, m) in per_example {
        if let Some((mask, (value, terms, _))) = loss {
            stats.add(mask, terms, value.to_f64_lossy());
        }
        stats.metrics.extend(m);
    }
    Ok(stats.row(epoch, Split::Val))
}

/// Per-example measures of a net on a set; `None` where ground truth is missing.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub per_example: Vec<Option<ExampleMetrics>>,
    pub report: MetricsReport,
}

pub fn evaluate<T: Real>(net: &RegressorNet<T>, examples: &[TrainExample<T>], model: &BodyModel<T>, camera: &Camera<T>) -> Result<Evaluation> {
    let per_example: Vec<Option<ExampleMetrics>> = examples
        .par_iter()
        .map(|ex| {
            let (rots, betas) = net.predict(&ex.grid)?;
            metrics_for(model, camera, ex, &rots, &betas)
        })
        .collect::<Result<_>>()?;
    let report = MetricsReport::new(per_example.iter().flatten().copied().collect());
    Ok(Evaluation { per_example, report })
}

/// One row of a supervision sweep; a failed training run keeps its error text.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub fraction: f64,
    pub outcome: std::result::Result<Summary, String>,
}

/// Trains one fresh net per labelled fraction and evaluates each on `val_set`.
/// Fractions must be in descending order and include 1 and 0.
pub fn supervision_sweep<T: Real>(
    train_set: &[TrainExample<T>],
    val_set: &[TrainExample<T>],
    model: &BodyModel<T>,
    camera: &Camera<T>,
    config: &TrainConfig,
    fractions: &[f64],
) -> Result<Vec<SweepRow>> {
    if fractions.windows(2).any(|w| !(w[0] > w[1])) || fractions.first() != Some(&1.0) || fractions.last() != Some(&0.0) {
        return Err(Error::InvalidArgument("fractions must descend from 1 to 0".into()));
    }
    let Some(first) = train_set.first() else {
        return Err(Error::InvalidArgument("training set is empty".into()));
    };
    let (size, granularity) = (first.grid.size(), first.grid.granularity());
    Ok(fractions
        .iter()
        .map(|&fraction| {
            let cfg = TrainConfig { labelled_fraction: fraction, ..config.clone() };
            let outcome = (|| {
                let net = RegressorNet::new(size, granularity, &cfg.hidden, cfg.seed)?;
                let trained = train(net, train_set, &[], model, camera, &cfg)?;
                let eval = evaluate(&trained.net, val_set, model, camera)?;
                eval.report.summary.ok_or_else(|| Error::InvalidArgument("validation set has no ground truth".into()))
            })();
            SweepRow { fraction, outcome: outcome.map_err(|e| e.to_string()) }
        })
        .collect())
}

/// CSV with one row per fraction: mean e_joints, e_quat and PCKh on the
/// validation set, or the error message.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["labelled_fraction", "e_joints_mm", "e_quat_rad", "pckh_pct", "error"]).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        let rec = match &r.outcome {
            Ok(s) => [r.fraction.to_string(), s.e_joints.mean.to_string(), s.e_quat.mean.to_string(), s.pckh.mean.to_string(), String::new()],
            Err(e) => [r.fraction.to_string(), String::new(), String::new(), String::new(), e.clone()],
        };
        w.write_record(&rec).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
