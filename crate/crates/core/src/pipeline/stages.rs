//! Training stages, test-time adaptation, evaluation and linear probes.

use serde::{Deserialize, Serialize};

use super::config::{LearningRate, Stage, StageConfig, TeacherKind};
use crate::autodiff::Tape;
use crate::data::{augment_pair, batch_indices, AugmentationConfig, Dataset, ImageView};
use crate::error::{Error, Result};
use crate::losses::{alignment_loss_on, contrastive_loss_on, cross_entropy_on, Anchoring};
use crate::metrics::{accuracy, per_class_accuracy};
use crate::models::{argmax_rows, map_batches, Classifier, Encoder, EncoderConfig, Mode, Module, Projector};
use crate::optim::{lr_at, Adam, AdamConfig, ScheduleConfig};
use crate::rng::derive_seed;
use crate::tensor::Tensor;

/// Supervised encoder `f` and classifier `h`.
#[derive(Clone, Debug)]
pub struct Supervised {
    pub f: Encoder,
    pub h: Classifier,
}

/// Self-supervised encoder `g` and projector `π`.
#[derive(Clone, Debug)]
pub struct SelfSupervised {
    pub g: Encoder,
    pub pi: Projector,
}

/// Y-model baseline: one encoder feeding both heads.
#[derive(Clone, Debug)]
pub struct YModel {
    pub encoder: Encoder,
    pub head: Classifier,
    pub projector: Projector,
}

/// Mean training loss per epoch of one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub stage: String,
    pub epoch_losses: Vec<f64>,
}

/// Seeded shuffling and per-step learning rates of one stage.
struct Plan<'a> {
    cfg: &'a StageConfig,
    label: &'a str,
    n: usize,
    schedule: Option<ScheduleConfig>,
}

impl<'a> Plan<'a> {
    fn new(cfg: &'a StageConfig, label: &'a str, n: usize) -> Result<Self> {
        let per_epoch = batch_indices(n, cfg.batch_size, false, 0)?.len();
        if per_epoch == 0 {
            return Err(Error::Empty("stage data has fewer than two samples"));
        }
        Ok(Plan {
            cfg,
            label,
            n,
            schedule: cfg.learning_rate.schedule(cfg.epochs, per_epoch),
        })
    }

    fn batches(&self, epoch: usize) -> Result<Vec<Vec<usize>>> {
        batch_indices(self.n, self.cfg.batch_size, true, derive_seed(self.cfg.seed, &[epoch as u64]))
    }

    fn batch_seed(&self, epoch: usize, batch: usize) -> u64 {
        derive_seed(self.cfg.seed, &[epoch as u64, batch as u64, 1])
    }

    fn lr(&self, global_step: usize) -> Result<f64> {
        match (&self.schedule, &self.cfg.learning_rate) {
            (Some(s), _) => lr_at(s, global_step),
            (None, LearningRate::Fixed { lr }) => Ok(*lr),
            (None, LearningRate::Cosine { .. }) => unreachable!("cosine rates always build a schedule"),
        }
    }

    /// Runs one epoch; `step(indices, batch_seed, lr)` returns the batch loss.
    fn epoch(&self, epoch: usize, global: &mut usize, mut step: impl FnMut(&[usize], u64, f64) -> Result<f64>) -> Result<f64> {
        let batches = self.batches(epoch)?;
        let mut total = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let lr = self.lr(*global)?;
            let loss = match step(idx, self.batch_seed(epoch, b), lr) {
                Ok(loss) => loss,
                Err(Error::NonFinite { .. }) => f64::NAN,
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    stage: self.label.to_string(),
                    epoch,
                    loss,
                });
            }
            total += loss;
            *global += 1;
        }
        Ok(total / batches.len() as f64)
    }

    fn run(&self, mut step: impl FnMut(&[usize], u64, f64) -> Result<f64>) -> Result<StageLog> {
        let mut global = 0;
        let epoch_losses = (0..self.cfg.epochs)
            .map(|e| self.epoch(e, &mut global, &mut step))
            .collect::<Result<Vec<_>>>()?;
        Ok(StageLog {
            stage: self.label.to_string(),
            epoch_losses,
        })
    }
}

fn adam_for(modules: &[&dyn Module]) -> Adam {
    let tensors: Vec<&Tensor> = modules.iter().flat_map(|m| m.params().tensors()).collect();
    Adam::new(&tensors, AdamConfig::default())
}

/// Trains `f` and `h` from scratch on labelled source data with
/// cross-entropy.
pub fn train_source_supervised(
    data: &Dataset,
    encoder: &EncoderConfig,
    head_seed: u64,
    cfg: &StageConfig,
) -> Result<(Supervised, StageLog)> {
    cfg.validate(Stage::SourceSupervised)?;
    let mut f = Encoder::new(encoder.clone())?;
    let mut h = Classifier::new(f.feature_dim(), data.classes(), head_seed);
    let mut adam = adam_for(&[&f, &h]);
    let plan = Plan::new(cfg, Stage::SourceSupervised.name(), data.len())?;
    let log = plan.run(|idx, _, lr| {
        let x = data.images().select_rows(idx);
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels()[i]).collect();
        let mut tape = Tape::new();
        let (fb, hb) = (f.bind(&mut tape), h.bind(&mut tape));
        let z = f.forward_bound(&mut tape, &fb, &x, Mode::Train)?;
        let logits = h.forward_bound(&mut tape, &hb, z)?;
        let loss = cross_entropy_on(&mut tape, logits, &labels)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        f.params_mut().absorb(&grads, &fb)?;
        h.params_mut().absorb(&grads, &hb)?;
        let mut params: Vec<&mut Tensor> = f.params_mut().tensors_mut().chain(h.params_mut().tensors_mut()).collect();
        adam.step(&mut params, lr)?;
        Ok(value)
    })?;
    Ok((Supervised { f, h }, log))
}

/// One contrastive update of `(encoder, projector)` on two views of `x`.
/// Returns the loss before the update.
#[allow(clippy::too_many_arguments)]
fn contrastive_step(
    encoder: &mut Encoder,
    projector: &mut Projector,
    adam: &mut Adam,
    x: &Tensor,
    aug: &AugmentationConfig,
    seed: u64,
    tau: crate::losses::Temperature,
    anchoring: Anchoring,
    lr: f64,
) -> Result<f64> {
    let (v1, v2) = augment_pair(x, aug, seed)?;
    let mut tape = Tape::new();
    let (eb, pb) = (encoder.bind(&mut tape), projector.bind(&mut tape));
    let z1 = encoder.forward_bound(&mut tape, &eb, &v1, Mode::Train)?;
    let z2 = encoder.forward_bound(&mut tape, &eb, &v2, Mode::Train)?;
    let h1 = projector.forward_bound(&mut tape, &pb, z1)?;
    let h2 = projector.forward_bound(&mut tape, &pb, z2)?;
    let loss = contrastive_loss_on(&mut tape, h1, h2, tau, anchoring)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    encoder.params_mut().absorb(&grads, &eb)?;
    projector.params_mut().absorb(&grads, &pb)?;
    let mut params: Vec<&mut Tensor> = encoder
        .params_mut()
        .tensors_mut()
        .chain(projector.params_mut().tensors_mut())
        .collect();
    adam.step(&mut params, lr)?;
    Ok(value)
}

/// Trains `g` and `π` from scratch with the contrastive objective on
/// augmented pairs. Labels are never read.
pub fn train_source_selfsup(
    images: ImageView<'_>,
    encoder: &EncoderConfig,
    projector_seed: u64,
    aug: &AugmentationConfig,
    anchoring: Anchoring,
    cfg: &StageConfig,
) -> Result<(SelfSupervised, StageLog)> {
    cfg.validate(Stage::SourceSelfsup)?;
    let tau = cfg.tau()?;
    let mut g = Encoder::new(encoder.clone())?;
    let mut pi = Projector::new(g.feature_dim(), projector_seed);
    let mut adam = adam_for(&[&g, &pi]);
    let plan = Plan::new(cfg, Stage::SourceSelfsup.name(), images.len())?;
    let log = plan.run(|idx, seed, lr| {
        contrastive_step(&mut g, &mut pi, &mut adam, &images.select(idx), aug, seed, tau, anchoring, lr)
    })?;
    Ok((SelfSupervised { g, pi }, log))
}

/// Teacher embeddings `W` for every image of `images`, in eval mode.
pub fn teacher_features(sup: &Supervised, images: &Tensor, kind: TeacherKind, batch_size: usize) -> Result<Tensor> {
    let feats = sup.f.encode(images, batch_size)?;
    match kind {
        TeacherKind::Encoder => Ok(feats),
        TeacherKind::ClassifierLogits => sup.h.logits(&feats),
    }
}

/// Trains `(g, π)` so that both augmented views match the frozen supervised
/// encoder's features. `sup` is only read.
#[allow(clippy::too_many_arguments)]
pub fn align_encoders(
    sup: &Supervised,
    ss: &mut SelfSupervised,
    images: ImageView<'_>,
    teacher: TeacherKind,
    aug: &AugmentationConfig,
    cfg: &StageConfig,
    eval_batch_size: usize,
) -> Result<StageLog> {
    cfg.validate(Stage::Align)?;
    let tau = cfg.tau()?;
    let w_all = teacher_features(sup, images.images(), teacher, eval_batch_size)?;
    if w_all.shape()[1] != ss.pi.dim() {
        return Err(Error::shape(
            "align_encoders",
            format!(
                "teacher width {} does not match projector width {}",
                w_all.shape()[1],
                ss.pi.dim()
            ),
        ));
    }
    let SelfSupervised { g, pi } = ss;
    g.set_frozen(false);
    pi.set_frozen(false);
    let mut adam = adam_for(&[&*g, &*pi]);
    let plan = Plan::new(cfg, Stage::Align.name(), images.len())?;
    plan.run(|idx, seed, lr| {
        let (v1, v2) = augment_pair(&images.select(idx), aug, seed)?;
        let mut tape = Tape::new();
        let (gb, pb) = (g.bind(&mut tape), pi.bind(&mut tape));
        let z1 = g.forward_bound(&mut tape, &gb, &v1, Mode::Train)?;
        let z2 = g.forward_bound(&mut tape, &gb, &v2, Mode::Train)?;
        let h1 = pi.forward_bound(&mut tape, &pb, z1)?;
        let h2 = pi.forward_bound(&mut tape, &pb, z2)?;
        let w = tape.constant(w_all.select_rows(idx));
        let loss = alignment_loss_on(&mut tape, h1, h2, w, tau)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        g.params_mut().absorb(&grads, &gb)?;
        pi.params_mut().absorb(&grads, &pb)?;
        let mut params: Vec<&mut Tensor> = g.params_mut().tensors_mut().chain(pi.params_mut().tensors_mut()).collect();
        adam.step(&mut params, lr)?;
        Ok(value)
    })
}

/// Trains a fresh classifier on fixed features with cross-entropy.
pub fn train_head_on_features(
    features: &Tensor,
    labels: &[usize],
    classes: usize,
    head_seed: u64,
    cfg: &StageConfig,
) -> Result<(Classifier, StageLog)> {
    cfg.validate(Stage::SourceSupervised)?;
    let (n, d) = features.dims2()?;
    let mut h = Classifier::new(d, classes, head_seed);
    let mut adam = adam_for(&[&h]);
    let plan = Plan::new(cfg, "classifier_on_frozen", n)?;
    let log = plan.run(|idx, _, lr| {
        let batch_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let mut tape = Tape::new();
        let z = tape.constant(features.select_rows(idx));
        let (logits, hb) = h.forward(&mut tape, z)?;
        let loss = cross_entropy_on(&mut tape, logits, &batch_labels)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        h.params_mut().absorb(&grads, &hb)?;
        let mut params: Vec<&mut Tensor> = h.params_mut().tensors_mut().collect();
        adam.step(&mut params, lr)?;
        Ok(value)
    })?;
    Ok((h, log))
}

/// Joint cross-entropy + contrastive training of the Y-model baseline.
pub fn train_y_model(
    data: &Dataset,
    encoder: &EncoderConfig,
    head_seed: u64,
    projector_seed: u64,
    aug: &AugmentationConfig,
    anchoring: Anchoring,
    cfg: &StageConfig,
) -> Result<(YModel, StageLog)> {
    cfg.validate(Stage::SourceSelfsup)?;
    let tau = cfg.tau()?;
    let mut e = Encoder::new(encoder.clone())?;
    let mut h = Classifier::new(e.feature_dim(), data.classes(), head_seed);
    let mut pi = Projector::new(e.feature_dim(), projector_seed);
    let mut adam = adam_for(&[&e, &h, &pi]);
    let plan = Plan::new(cfg, "joint", data.len())?;
    let log = plan.run(|idx, seed, lr| {
        let x = data.images().select_rows(idx);
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels()[i]).collect();
        let (v1, v2) = augment_pair(&x, aug, seed)?;
        let mut tape = Tape::new();
        let (eb, hb, pb) = (e.bind(&mut tape), h.bind(&mut tape), pi.bind(&mut tape));
        let z = e.forward_bound(&mut tape, &eb, &x, Mode::Train)?;
        let logits = h.forward_bound(&mut tape, &hb, z)?;
        let ce = cross_entropy_on(&mut tape, logits, &labels)?;
        let z1 = e.forward_bound(&mut tape, &eb, &v1, Mode::Train)?;
        let z2 = e.forward_bound(&mut tape, &eb, &v2, Mode::Train)?;
        let p1 = pi.forward_bound(&mut tape, &pb, z1)?;
        let p2 = pi.forward_bound(&mut tape, &pb, z2)?;
        let con = contrastive_loss_on(&mut tape, p1, p2, tau, anchoring)?;
        let loss = tape.add(ce, con)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        e.params_mut().absorb(&grads, &eb)?;
        h.params_mut().absorb(&grads, &hb)?;
        pi.params_mut().absorb(&grads, &pb)?;
        let mut params: Vec<&mut Tensor> = e
            .params_mut()
            .tensors_mut()
            .chain(h.params_mut().tensors_mut())
            .chain(pi.params_mut().tensors_mut())
            .collect();
        adam.step(&mut params, lr)?;
        Ok(value)
    })?;
    Ok((
        YModel {
            encoder: e,
            head: h,
            projector: pi,
        },
        log,
    ))
}

/// Mean contrastive loss over one pass, eval-mode forwards, no state change.
fn eval_contrastive_loss(
    encoder: &Encoder,
    projector: &Projector,
    plan: &Plan<'_>,
    target: ImageView<'_>,
    aug: &AugmentationConfig,
    anchoring: Anchoring,
) -> Result<f64> {
    let tau = plan.cfg.tau()?;
    let batches = plan.batches(0)?;
    let mut total = 0.0;
    for (b, idx) in batches.iter().enumerate() {
        let (v1, v2) = augment_pair(&target.select(idx), aug, plan.batch_seed(0, b))?;
        let mut tape = Tape::new();
        let z1 = encoder.eval_forward(&mut tape, &v1)?;
        let z2 = encoder.eval_forward(&mut tape, &v2)?;
        let h1 = tape.constant(projector.apply(tape.value(z1))?);
        let h2 = tape.constant(projector.apply(tape.value(z2))?);
        let loss = contrastive_loss_on(&mut tape, h1, h2, tau, anchoring)?;
        total += tape.value(loss).item();
    }
    Ok(total / batches.len() as f64)
}

/// Adapts `(encoder, projector)` to unlabelled target images with the
/// contrastive objective for `cfg.epochs` passes. Each pass reshuffles the
/// target set. `observe(iteration, loss, encoder, projector)` runs before the
/// first pass (iteration 0, eval-mode loss) and after every pass.
#[allow(clippy::too_many_arguments)]
pub fn test_time_adapt(
    encoder: &mut Encoder,
    projector: &mut Projector,
    target: ImageView<'_>,
    aug: &AugmentationConfig,
    anchoring: Anchoring,
    cfg: &StageConfig,
    mut observe: impl FnMut(usize, f64, &Encoder, &Projector) -> Result<()>,
) -> Result<()> {
    cfg.validate(Stage::Ttt)?;
    if target.is_empty() {
        return Err(Error::Empty("target set"));
    }
    let tau = cfg.tau()?;
    encoder.set_frozen(false);
    projector.set_frozen(false);
    let plan = Plan::new(cfg, Stage::Ttt.name(), target.len())?;
    observe(0, eval_contrastive_loss(encoder, projector, &plan, target, aug, anchoring)?, encoder, projector)?;
    let mut adam = adam_for(&[&*encoder, &*projector]);
    let mut global = 0;
    for iteration in 1..=cfg.epochs {
        let loss = plan.epoch(iteration, &mut global, |idx, seed, lr| {
            contrastive_step(encoder, projector, &mut adam, &target.select(idx), aug, seed, tau, anchoring, lr)
        })?;
        observe(iteration, loss, encoder, projector)?;
    }
    Ok(())
}

/// How a classifier reads features.
#[derive(Clone, Copy, Debug)]
pub enum Composition<'a> {
    /// `h(e(x))`.
    Direct { encoder: &'a Encoder, head: &'a Classifier },
    /// `h(π(g(x)))`.
    Projected {
        encoder: &'a Encoder,
        projector: &'a Projector,
        head: &'a Classifier,
    },
}

impl Composition<'_> {
    /// Eval-mode classifier inputs for `x`.
    pub fn features(&self, x: &Tensor, batch_size: usize) -> Result<Tensor> {
        match *self {
            Composition::Direct { encoder, .. } => encoder.encode(x, batch_size),
            Composition::Projected { encoder, projector, .. } => {
                map_batches(x, batch_size, projector.dim(), |chunk| projector.apply(&encoder.encode(chunk, chunk.shape()[0])?))
            }
        }
    }

    pub fn head(&self) -> &Classifier {
        match *self {
            Composition::Direct { head, .. } | Composition::Projected { head, .. } => head,
        }
    }

    pub fn predict(&self, x: &Tensor, batch_size: usize) -> Result<Vec<usize>> {
        self.head().predict(&self.features(x, batch_size)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub per_class: Vec<Option<f64>>,
}

/// Eval-mode accuracy of `model` on labelled data.
pub fn evaluate(model: &Composition<'_>, ds: &Dataset, batch_size: usize) -> Result<Evaluation> {
    let predictions = model.predict(ds.images(), batch_size)?;
    Ok(Evaluation {
        accuracy: accuracy(&predictions, ds.labels())?,
        per_class: per_class_accuracy(&predictions, ds.labels(), ds.classes()),
    })
}

/// Held-out accuracy of multinomial logistic regression trained on
/// standardised `train` features with full-batch Adam.
pub fn linear_probe(
    train: (&Tensor, &[usize]),
    test: (&Tensor, &[usize]),
    classes: usize,
    epochs: usize,
    seed: u64,
) -> Result<f64> {
    let flat = |t: &Tensor| -> Result<Tensor> {
        let n = t.shape().first().copied().unwrap_or(0);
        t.reshape(vec![n, t.len() / n.max(1)])
    };
    let (xtr, xte) = (flat(train.0)?, flat(test.0)?);
    let (n, d) = xtr.dims2()?;
    if n == 0 {
        return Err(Error::Empty("probe training set"));
    }
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for row in xtr.data().chunks_exact(d) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / n as f64);
    }
    for row in xtr.data().chunks_exact(d) {
        std.iter_mut().zip(row.iter().zip(&mean)).for_each(|(s, (v, m))| *s += (v - m).powi(2) / n as f64);
    }
    let std: Vec<f64> = std.into_iter().map(|s| s.sqrt().max(1e-8)).collect();
    let standardise = |x: &Tensor| -> Result<Tensor> {
        let data = x
            .data()
            .chunks_exact(d)
            .flat_map(|row| row.iter().zip(&mean).zip(&std).map(|((v, m), s)| (v - m) / s))
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    };
    let (xtr, xte) = (standardise(&xtr)?, standardise(&xte)?);
    let mut h = Classifier::new(d, classes, seed);
    let mut adam = adam_for(&[&h]);
    for _ in 0..epochs {
        let mut tape = Tape::new();
        let z = tape.constant(xtr.clone());
        let (logits, hb) = h.forward(&mut tape, z)?;
        let loss = cross_entropy_on(&mut tape, logits, train.1)?;
        let grads = tape.backward(loss)?;
        h.params_mut().absorb(&grads, &hb)?;
        let mut params: Vec<&mut Tensor> = h.params_mut().tensors_mut().collect();
        adam.step(&mut params, 0.05)?;
    }
    accuracy(&argmax_rows(&h.logits(&xte)?), test.1)
}
