//! End-to-end experiment: data splits, every method's stages, per-iteration
//! metrics and stage checkpoints.

use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, Stage, StageConfig};
use super::stages::{
    align_encoders, evaluate, test_time_adapt, train_head_on_features, train_source_selfsup, train_source_supervised,
    train_y_model, Composition, SelfSupervised, StageLog, Supervised,
};
use crate::data::{generate_synthetic_dataset, CorruptionKind, CorruptionSpec, Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{centroid_drift, davies_bouldin, median_centroids, CentroidSet, IterationRecord, RunReport};
use crate::models::{Classifier, Encoder, EncoderConfig, Module, Projector};
use crate::rng::derive_seed;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Supervised + self-supervised pretraining, alignment, adaptation.
    /// Also emits the unadapted aligned model as `no_adapt`.
    Cta,
    /// No alignment: classifier trained on frozen self-supervised features.
    CtaC,
    /// Shared encoder trained jointly on both objectives.
    YModel,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Cta => "cta",
            Method::CtaC => "cta_c",
            Method::YModel => "y_model",
        }
    }
}

pub const NO_ADAPT: &str = "no_adapt";

/// Synthetic shapes source data, split into train/test, with a corrupted copy
/// of the test split as target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub classes: usize,
    pub samples: usize,
    pub image_size: usize,
    /// Fraction of samples held out as source-test (and corrupted as target).
    pub test_fraction: f64,
    pub corruption: CorruptionSpec,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            classes: 4,
            samples: 2000,
            image_size: 16,
            test_fraction: 0.25,
            corruption: CorruptionSpec {
                kind: CorruptionKind::GaussianNoise,
                severity: 5,
            },
            seed: 0,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("data.test_fraction", "must lie strictly between 0 and 1"));
        }
        self.corruption
            .validate()
            .map_err(|e| Error::config("data.corruption.severity", e.to_string()))
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub source_train: Dataset,
    pub source_test: Dataset,
    pub target: Dataset,
    pub target_name: String,
}

impl ExperimentData {
    pub fn synthetic(cfg: &DataConfig) -> Result<Self> {
        cfg.validate()?;
        let all = generate_synthetic_dataset(cfg.classes, cfg.samples, cfg.image_size, cfg.seed)?;
        Self::from_dataset(&all, cfg.test_fraction, cfg.corruption, cfg.seed)
    }

    /// Splits `all` in order and corrupts the test part.
    pub fn from_dataset(all: &Dataset, test_fraction: f64, corruption: CorruptionSpec, seed: u64) -> Result<Self> {
        let n_test = ((all.len() as f64) * test_fraction).round() as usize;
        let (source_train, source_test) = all.split_at(all.len() - n_test, Split::SourceTrain, Split::SourceTest)?;
        Self::from_splits(source_train, source_test, corruption, seed)
    }

    pub fn from_splits(source_train: Dataset, source_test: Dataset, corruption: CorruptionSpec, seed: u64) -> Result<Self> {
        if source_train.classes() != source_test.classes() {
            return Err(Error::InvalidArgument("source splits disagree on the class count".into()));
        }
        let target = source_test.corrupted(corruption, derive_seed(seed, &[0xC0]))?;
        Ok(ExperimentData {
            source_train,
            source_test,
            target,
            target_name: corruption.to_string(),
        })
    }

    pub fn classes(&self) -> usize {
        self.source_train.classes()
    }
}

/// SHA-256 of each model's parameters after a stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HashSnapshot {
    pub after: String,
    pub f: String,
    pub h: String,
    pub g: String,
    pub pi: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Outcome {
    pub reports: Vec<RunReport>,
    pub logs: Vec<StageLog>,
    /// CTA parameter hashes after each of its stages.
    pub hashes: Vec<HashSnapshot>,
    /// Source-test accuracy of `h(f(x))`.
    pub supervised_accuracy: Option<f64>,
}

impl Outcome {
    pub fn report(&self, method: &str) -> Option<&RunReport> {
        self.reports.iter().find(|r| r.method == method)
    }
}

/// Computes the per-iteration record for one adapted composition.
struct Monitor<'a> {
    target: &'a Dataset,
    source_reference: CentroidSet,
    start: Option<CentroidSet>,
    batch_size: usize,
    report: RunReport,
}

impl<'a> Monitor<'a> {
    fn new(report: RunReport, target: &'a Dataset, source_reference: CentroidSet, batch_size: usize) -> Self {
        Monitor {
            target,
            source_reference,
            start: None,
            batch_size,
            report,
        }
    }

    fn observe(&mut self, iteration: usize, loss: f64, model: &Composition<'_>) -> Result<()> {
        let feats = model.features(self.target.images(), self.batch_size)?;
        let predictions = model.head().predict(&feats)?;
        let centroids = median_centroids(&feats, self.target.labels(), self.target.classes())?;
        let start = self.start.get_or_insert_with(|| centroids.clone());
        let record = IterationRecord {
            iteration,
            loss,
            accuracy: crate::metrics::accuracy(&predictions, self.target.labels())?,
            dbi: davies_bouldin(&feats, self.target.labels())?,
            drift: centroid_drift(start, &centroids)?,
            source_distance: centroid_drift(&self.source_reference, &centroids)?,
        };
        self.report.push(record)
    }
}

fn source_centroids(model: &Composition<'_>, source: &Dataset, batch_size: usize) -> Result<CentroidSet> {
    let feats = model.features(source.images(), batch_size)?;
    median_centroids(&feats, source.labels(), source.classes())
}

fn compose<'x>(encoder: &'x Encoder, projector: &'x Projector, head: &'x Classifier, projected: bool) -> Composition<'x> {
    if projected {
        Composition::Projected {
            encoder,
            projector,
            head,
        }
    } else {
        Composition::Direct { encoder, head }
    }
}

/// Stage settings with the run seed mixed in.
fn seeded_stage(cfg: &StageConfig, run_seed: u64, salt: u64) -> StageConfig {
    StageConfig {
        seed: derive_seed(run_seed, &[salt, cfg.seed]),
        ..cfg.clone()
    }
}

fn seeded_encoder(cfg: &EncoderConfig, run_seed: u64, salt: u64) -> EncoderConfig {
    EncoderConfig {
        seed: derive_seed(run_seed, &[salt, cfg.seed]),
        ..cfg.clone()
    }
}

/// Receives `(stage directory name, named tensors)` after each stage.
pub type CheckpointSink<'a> = dyn FnMut(&str, Vec<(String, Tensor)>) -> Result<()> + 'a;

struct Runner<'a, 'b> {
    cfg: &'a PipelineConfig,
    data: &'a ExperimentData,
    seed: u64,
    snapshot: &'a serde_json::Value,
    sink: &'a mut CheckpointSink<'b>,
}

impl Runner<'_, '_> {
    fn stage(&self, cfg: &StageConfig, salt: u64) -> StageConfig {
        seeded_stage(cfg, self.seed, salt)
    }

    fn report(&self, method: &str, stages: &[&str]) -> RunReport {
        let mut r = RunReport::new(method, self.seed, self.data.target_name.clone(), self.snapshot.clone());
        r.stages = stages.iter().map(|s| s.to_string()).collect();
        r
    }

    /// Adapts a copy of `(encoder, projector)`, reading through `head`
    /// (`projected` selects `h∘π∘g` versus `h∘e`).
    fn adapt(
        &mut self,
        mut report: RunReport,
        encoder: &Encoder,
        projector: &Projector,
        head: &Classifier,
        projected: bool,
        checkpoint: &str,
    ) -> Result<(RunReport, Encoder, Projector)> {
        let make = |e, p| compose(e, p, head, projected);
        let bs = self.cfg.eval_batch_size;
        let source_ref = source_centroids(&make(encoder, projector), &self.data.source_test, bs)?;
        report.source_accuracy = evaluate(&make(encoder, projector), &self.data.source_test, bs)?.accuracy;
        let mut monitor = Monitor::new(report, &self.data.target, source_ref, bs);
        let (mut e, mut p) = (encoder.duplicate(), projector.clone());
        let ttt = self.stage(&self.cfg.ttt, 3);
        test_time_adapt(
            &mut e,
            &mut p,
            self.data.target.unlabeled(),
            &self.cfg.augmentation,
            self.cfg.anchoring,
            &ttt,
            |it, loss, e, p| monitor.observe(it, loss, &compose(e, p, head, projected)),
        )?;
        // `g`/`pi` marks a projected composition, `encoder`/`projector` a direct one
        let (ep, pp) = if projected { ("g", "pi") } else { ("encoder", "projector") };
        let mut state = e.state(ep);
        state.extend(p.state(pp));
        state.extend(head.state("head"));
        (self.sink)(checkpoint, state)?;
        Ok((monitor.report, e, p))
    }
}

/// Runs `methods` for one seed. Stage checkpoints go to `sink`; `snapshot`
/// is embedded in every report.
pub fn run_experiment(
    cfg: &PipelineConfig,
    data: &ExperimentData,
    seed: u64,
    methods: &[Method],
    snapshot: &serde_json::Value,
    sink: &mut CheckpointSink<'_>,
) -> Result<Outcome> {
    cfg.validate()?;
    let mut runner = Runner {
        cfg,
        data,
        seed,
        snapshot,
        sink,
    };
    let mut outcome = Outcome {
        reports: Vec::new(),
        logs: Vec::new(),
        hashes: Vec::new(),
        supervised_accuracy: None,
    };
    let bs = cfg.eval_batch_size;
    let wants = |m| methods.contains(&m);

    let needs_selfsup = wants(Method::Cta) || wants(Method::CtaC);
    let selfsup = if needs_selfsup {
        let stage = runner.stage(&cfg.source_selfsup, 1);
        let (ss, log) = train_source_selfsup(
            data.source_train.unlabeled(),
            &seeded_encoder(&cfg.encoder, seed, 101),
            derive_seed(seed, &[103]),
            &cfg.augmentation,
            cfg.anchoring,
            &stage,
        )?;
        outcome.logs.push(log);
        let mut state = ss.g.state("g");
        state.extend(ss.pi.state("pi"));
        (runner.sink)(Stage::SourceSelfsup.name(), state)?;
        Some(ss)
    } else {
        None
    };

    if wants(Method::CtaC) {
        let ss = selfsup.as_ref().expect("trained above");
        let mut frozen = ss.clone();
        frozen.g.set_frozen(true);
        frozen.pi.set_frozen(true);
        let feats = frozen.pi.apply(&frozen.g.encode(data.source_train.images(), bs)?)?;
        let stage = runner.stage(&cfg.cta_c_head, 4);
        let (head, mut log) = train_head_on_features(&feats, data.source_train.labels(), data.classes(), derive_seed(seed, &[107]), &stage)?;
        log.stage = "cta_c_head".into();
        outcome.logs.push(log);
        let mut state = head.state("head");
        state.extend(frozen.g.state("g"));
        state.extend(frozen.pi.state("pi"));
        (runner.sink)("cta_c_head", state)?;
        let report = runner.report(Method::CtaC.name(), &[Stage::SourceSelfsup.name(), "classifier_on_frozen", Stage::Ttt.name()]);
        let (report, _, _) = runner.adapt(report, &frozen.g, &frozen.pi, &head, true, "ttt_cta_c")?;
        outcome.reports.push(report);
    }

    if wants(Method::Cta) {
        let stage = runner.stage(&cfg.source_supervised, 0);
        let (mut sup, log) = train_source_supervised(
            &data.source_train,
            &seeded_encoder(&cfg.encoder, seed, 100),
            derive_seed(seed, &[102]),
            &stage,
        )?;
        outcome.logs.push(log);
        sup.f.set_frozen(true);
        sup.h.set_frozen(true);
        let mut state = sup.f.state("f");
        state.extend(sup.h.state("h"));
        (runner.sink)(Stage::SourceSupervised.name(), state)?;
        let Supervised { f, h } = &sup;
        outcome.supervised_accuracy = Some(evaluate(&Composition::Direct { encoder: f, head: h }, &data.source_test, bs)?.accuracy);

        let mut ss: SelfSupervised = selfsup.clone().expect("trained above");
        let snap = |after: &str, sup: &Supervised, ss: &SelfSupervised| HashSnapshot {
            after: after.into(),
            f: sup.f.param_hash(),
            h: sup.h.param_hash(),
            g: ss.g.param_hash(),
            pi: ss.pi.param_hash(),
        };
        outcome.hashes.push(snap("pretraining", &sup, &ss));

        let stage = runner.stage(&cfg.align, 2);
        let log = align_encoders(&sup, &mut ss, data.source_train.unlabeled(), cfg.teacher, &cfg.augmentation, &stage, bs)?;
        outcome.logs.push(log);
        outcome.hashes.push(snap(Stage::Align.name(), &sup, &ss));
        let mut state = ss.g.state("g");
        state.extend(ss.pi.state("pi"));
        (runner.sink)(Stage::Align.name(), state)?;

        let stages = [Stage::SourceSupervised.name(), Stage::SourceSelfsup.name(), Stage::Align.name()];
        let report = runner.report(Method::Cta.name(), &[stages[0], stages[1], stages[2], Stage::Ttt.name()]);
        let (report, g, pi) = runner.adapt(report, &ss.g, &ss.pi, &sup.h, true, Stage::Ttt.name())?;

        let mut no_adapt = runner.report(NO_ADAPT, &stages);
        no_adapt.source_accuracy = report.source_accuracy;
        no_adapt.push(report.first().expect("iteration 0 is always recorded").clone())?;
        outcome.reports.push(no_adapt);
        outcome.reports.push(report);

        outcome.hashes.push(snap(Stage::Ttt.name(), &sup, &SelfSupervised { g, pi }));
    }

    if wants(Method::YModel) {
        let stage = runner.stage(&cfg.source_selfsup, 5);
        let (y, mut log) = train_y_model(
            &data.source_train,
            &seeded_encoder(&cfg.encoder, seed, 104),
            derive_seed(seed, &[105]),
            derive_seed(seed, &[106]),
            &cfg.augmentation,
            cfg.anchoring,
            &stage,
        )?;
        log.stage = "joint".into();
        outcome.logs.push(log);
        let mut head = y.head.clone();
        head.set_frozen(true);
        let mut state = y.encoder.state("encoder");
        state.extend(y.projector.state("projector"));
        state.extend(head.state("head"));
        (runner.sink)("y_model", state)?;
        let report = runner.report(Method::YModel.name(), &["joint", Stage::Ttt.name()]);
        let (report, _, _) = runner.adapt(report, &y.encoder, &y.projector, &head, false, "ttt_y_model")?;
        outcome.reports.push(report);
    }

    outcome.reports.sort_by_key(|r| order_key(&r.method));
    Ok(outcome)
}

fn order_key(method: &str) -> usize {
    [NO_ADAPT, "cta", "cta_c", "y_model"]
        .iter()
        .position(|m| *m == method)
        .unwrap_or(usize::MAX)
}
