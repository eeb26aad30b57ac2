//! `cta eval`: accuracy of a stage checkpoint on source-test and target data.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cta_core::models::{load_checkpoint, Classifier, Encoder, Module, Projector};
use cta_core::pipeline::{evaluate, Composition};
use cta_core::Tensor;

use crate::run::{load_data, resolve, CHECKPOINT_FILE};
use crate::{Failure, Overrides};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub checkpoint: PathBuf,
    /// `direct` for `h(e(x))`, `projected` for `h(pi(g(x)))`.
    pub composition: String,
    pub seed: u64,
    pub target: String,
    pub source_accuracy: f64,
    pub target_accuracy: f64,
    pub target_per_class: Vec<Option<f64>>,
}

fn tensor<'a>(entries: &'a [(String, Tensor)], name: &str) -> Result<&'a Tensor, Failure> {
    entries
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t)
        .ok_or_else(|| Failure::Config(format!("checkpoint lacks `{name}`")))
}

fn head_from(entries: &[(String, Tensor)], prefix: &str) -> Result<Classifier, Failure> {
    let weight = tensor(entries, &format!("{prefix}.weight"))?;
    let (d, c) = weight.dims2()?;
    let mut head = Classifier::new(d, c, 0);
    head.load_state(prefix, entries)?;
    Ok(head)
}

pub fn cmd_eval(config: &Path, overrides: &Overrides, checkpoint: &Path) -> Result<EvalOutput, Failure> {
    let cfg = resolve(config, overrides)?;
    let path = if checkpoint.is_dir() {
        checkpoint.join(CHECKPOINT_FILE)
    } else {
        checkpoint.to_path_buf()
    };
    let entries = load_checkpoint(&path).map_err(|e| match e {
        cta_core::Error::Io(io) => Failure::Io(format!("{}: {io}", path.display())),
        other => Failure::from(other),
    })?;
    let prefixes: BTreeSet<&str> = entries.iter().filter_map(|(n, _)| n.split('.').next()).collect();
    let has = |p: &[&str]| p.iter().all(|x| prefixes.contains(x));

    let encoder_with = |prefix: &str| -> Result<Encoder, Failure> {
        let mut e = Encoder::new(cfg.pipeline.encoder.clone())?;
        e.load_state(prefix, &entries)?;
        Ok(e)
    };
    let (encoder, projector, head, projected) = if has(&["f", "h"]) {
        (encoder_with("f")?, None, head_from(&entries, "h")?, false)
    } else if has(&["g", "pi", "head"]) {
        let g = encoder_with("g")?;
        let mut pi = Projector::new(g.feature_dim(), 0);
        pi.load_state("pi", &entries)?;
        (g, Some(pi), head_from(&entries, "head")?, true)
    } else if has(&["encoder", "head"]) {
        (encoder_with("encoder")?, None, head_from(&entries, "head")?, false)
    } else {
        return Err(Failure::Config(format!(
            "{}: no classifier to evaluate (found {:?})",
            path.display(),
            prefixes
        )));
    };
    let model = match &projector {
        Some(p) => Composition::Projected {
            encoder: &encoder,
            projector: p,
            head: &head,
        },
        None => Composition::Direct {
            encoder: &encoder,
            head: &head,
        },
    };

    let seed = cfg.seeds[0];
    let data = load_data(&cfg, cfg.corruptions[0], seed)?;
    let bs = cfg.pipeline.eval_batch_size;
    let source = evaluate(&model, &data.source_test, bs)?;
    let target = evaluate(&model, &data.target, bs)?;
    let output = EvalOutput {
        checkpoint: path,
        composition: if projected { "projected" } else { "direct" }.into(),
        seed,
        target: data.target_name,
        source_accuracy: source.accuracy,
        target_accuracy: target.accuracy,
        target_per_class: target.per_class,
    };
    if let Some(out) = &overrides.out {
        let json = serde_json::to_string_pretty(&output).map_err(|e| Failure::Internal(e.to_string()))?;
        cta_core::io::write_string_atomic(&out.join("eval.json"), &json)?;
    }
    Ok(output)
}
