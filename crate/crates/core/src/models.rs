//! Encoders, the linear classifier head and the linear projector.
//!
//! The encoder is a small convolutional network: `widths.len()` stages of
//! 3x3 stride-2 convolution, optional batch normalisation and ReLU, then
//! global average pooling and a linear map to `feature_dim`. Activations are
//! kept as `(n * h * w, channels)` rows so a convolution is patch extraction
//! followed by a single matrix product.

use std::fs::File;
use std::io::{BufReader, ErrorKind, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{ConvGeometry, Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::rng::{derive_seed, seeded, uniform_vec};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
const KERNEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Batch statistics, running statistics updated.
    Train,
    /// Running statistics, no state change.
    Eval,
}

/// Named parameter tensors of one model plus its frozen flag.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
    frozen: bool,
}

/// Tape handles for a [`ParamSet`]; `None` for parameters recorded as
/// constants because the owner was frozen.
#[derive(Clone, Debug)]
pub struct Bound(Vec<Option<Var>>);

impl Bound {
    pub fn var(&self, i: usize) -> Option<Var> {
        self.0[i]
    }
}

impl ParamSet {
    fn new(entries: Vec<(String, Tensor)>) -> Self {
        let mut set = ParamSet {
            entries,
            frozen: false,
        };
        set.set_frozen(false);
        set
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
        self.tensors_mut().for_each(|t| t.set_requires_grad(!frozen));
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(
            self.entries
                .iter()
                .map(|(_, t)| (!self.frozen).then(|| tape.param(t)))
                .collect(),
        )
    }

    fn var(tape_vars: &Bound, tape: &mut Tape, entries: &[(String, Tensor)], i: usize) -> Var {
        match tape_vars.0[i] {
            Some(v) => v,
            None => tape.constant(entries[i].1.clone()),
        }
    }

    fn check_binding(&self, bound: &Bound) -> Result<()> {
        if bound.0.len() != self.entries.len() {
            return Err(Error::shape("bind", "binding belongs to another model".to_string()));
        }
        Ok(())
    }

    /// Replaces every parameter's gradient buffer with its gradient from
    /// `grads`. Frozen sets are left without buffers.
    pub fn absorb(&mut self, grads: &Gradients, bound: &Bound) -> Result<()> {
        self.check_binding(bound)?;
        for ((_, t), var) in self.entries.iter_mut().zip(&bound.0) {
            t.zero_grad();
            let Some(var) = var else { continue };
            match grads.get(*var) {
                Some(g) => t.accumulate_grad(g)?,
                None => t.accumulate_grad(&vec![0.0; t.len()])?,
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.tensors_mut().for_each(Tensor::zero_grad);
    }
}

/// Shared behaviour of the trainable components.
pub trait Module {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;

    /// Non-trainable state saved alongside the parameters.
    fn buffers(&self) -> Vec<(String, &Tensor)> {
        Vec::new()
    }

    fn buffer_mut(&mut self, _name: &str) -> Option<&mut Tensor> {
        None
    }

    fn is_frozen(&self) -> bool {
        self.params().is_frozen()
    }

    fn set_frozen(&mut self, frozen: bool) {
        self.params_mut().set_frozen(frozen);
    }

    /// SHA-256 over every parameter's name, shape and little-endian values.
    fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.params().entries() {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update((t.rank() as u64).to_le_bytes());
            t.shape().iter().for_each(|&d| h.update((d as u64).to_le_bytes()));
            t.data().iter().for_each(|v| h.update(v.to_le_bytes()));
        }
        hex::encode(h.finalize())
    }

    /// Parameters and buffers under `prefix.`.
    fn state(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let params = self.params().entries().iter().map(|(n, t)| (n.clone(), t));
        params
            .chain(self.buffers())
            .map(|(n, t)| {
                let mut plain = t.clone();
                plain.set_requires_grad(false);
                (format!("{prefix}.{n}"), plain)
            })
            .collect()
    }

    fn load_state(&mut self, prefix: &str, entries: &[(String, Tensor)]) -> Result<()> {
        let lookup = |name: &str| -> Result<&Tensor> {
            let key = format!("{prefix}.{name}");
            entries
                .iter()
                .find(|(n, _)| *n == key)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Format(format!("checkpoint has no `{key}`")))
        };
        let names: Vec<String> = self.params().names().map(str::to_string).collect();
        for name in names {
            let src = lookup(&name)?.clone();
            let dst = self.params_mut().get_mut(&name).expect("own parameter");
            copy_checked(dst, src, &name)?;
        }
        let buffers: Vec<String> = self.buffers().into_iter().map(|(n, _)| n).collect();
        for name in buffers {
            let src = lookup(&name)?.clone();
            let dst = self.buffer_mut(&name).expect("own buffer");
            copy_checked(dst, src, &name)?;
        }
        Ok(())
    }
}

fn copy_checked(dst: &mut Tensor, src: Tensor, name: &str) -> Result<()> {
    if dst.shape() != src.shape() {
        return Err(Error::Format(format!(
            "`{name}` has shape {:?} in checkpoint, model expects {:?}",
            src.shape(),
            dst.shape()
        )));
    }
    dst.data_mut().copy_from_slice(src.data());
    Ok(())
}

fn uniform_init(shape: Vec<usize>, fan_in: usize, seed: u64) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape, uniform_vec(&mut seeded(seed), n, -bound, bound)).expect("shape matches")
}

fn affine(tape: &mut Tape, x: Var, w: Var, b: Var, op: &'static str) -> Result<Var> {
    let width = tape.shape(x).get(1).copied();
    let expected = tape.shape(w)[0];
    if tape.shape(x).len() != 2 || width != Some(expected) {
        return Err(Error::shape(
            op,
            format!("input {:?}, expected width {expected}", tape.shape(x)),
        ));
    }
    let y = tape.matmul(x, w)?;
    tape.add(y, b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// `(channels, height, width)` of the input images.
    pub input_shape: (usize, usize, usize),
    /// Output channels of each convolution stage.
    pub widths: Vec<usize>,
    pub feature_dim: usize,
    pub use_batchnorm: bool,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_shape: (3, 16, 16),
            widths: vec![16, 32, 64],
            feature_dim: 64,
            use_batchnorm: true,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim < 2 {
            return Err(Error::config("encoder.feature_dim", "must be at least 2"));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::config("encoder.widths", "need at least one non-zero stage width"));
        }
        let (c, h, w) = self.input_shape;
        if c == 0 || h < 2 || w < 2 {
            return Err(Error::config("encoder.input_shape", "degenerate input shape"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Running {
    mean: Tensor,
    var: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    cfg: EncoderConfig,
    params: ParamSet,
    running: Vec<Running>,
}

/// Batch statistics gathered by a train-mode forward.
struct BatchStats(Vec<(Vec<f64>, Vec<f64>)>);

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut entries = Vec::new();
        let mut running = Vec::new();
        let mut cin = cfg.input_shape.0;
        for (i, &cout) in cfg.widths.iter().enumerate() {
            let fan_in = KERNEL * KERNEL * cin;
            let seed = derive_seed(cfg.seed, &[i as u64]);
            entries.push((format!("conv{i}.weight"), uniform_init(vec![fan_in, cout], fan_in, seed)));
            if cfg.use_batchnorm {
                entries.push((format!("bn{i}.gamma"), Tensor::full(vec![cout], 1.0)));
                entries.push((format!("bn{i}.beta"), Tensor::zeros(vec![cout])));
                running.push(Running {
                    mean: Tensor::zeros(vec![cout]),
                    var: Tensor::full(vec![cout], 1.0),
                });
            } else {
                let seed = derive_seed(cfg.seed, &[i as u64, 1]);
                entries.push((format!("conv{i}.bias"), uniform_init(vec![cout], fan_in, seed)));
            }
            cin = cout;
        }
        let d = cfg.feature_dim;
        let seed = derive_seed(cfg.seed, &[cfg.widths.len() as u64]);
        entries.push(("fc.weight".into(), uniform_init(vec![cin, d], cin, seed)));
        entries.push(("fc.bias".into(), uniform_init(vec![d], cin, derive_seed(seed, &[1]))));
        Ok(Encoder {
            cfg,
            params: ParamSet::new(entries),
            running,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn feature_dim(&self) -> usize {
        self.cfg.feature_dim
    }

    /// Deep copy, unfrozen regardless of the source's flag.
    pub fn duplicate(&self) -> Encoder {
        let mut copy = self.clone();
        copy.params.zero_grad();
        copy.set_frozen(false);
        copy
    }

    fn to_rows(&self, x: &Tensor) -> Result<(usize, Tensor)> {
        let (c, h, w) = self.cfg.input_shape;
        let s = x.shape();
        if s.len() != 4 || s[1..] != [c, h, w] {
            return Err(Error::shape(
                "encoder_forward",
                format!("expected (N, {c}, {h}, {w}), got {s:?}"),
            ));
        }
        let n = s[0];
        if n == 0 {
            return Err(Error::Empty("encoder input batch"));
        }
        let src = x.data();
        let mut rows = vec![0.0; n * h * w * c];
        for b in 0..n {
            for ch in 0..c {
                let plane = &src[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
                for (p, &v) in plane.iter().enumerate() {
                    rows[(b * h * w + p) * c + ch] = v;
                }
            }
        }
        Ok((n, Tensor::new(vec![n * h * w, c], rows)?))
    }

    fn forward_impl(&self, tape: &mut Tape, bound: &Bound, x: &Tensor, mode: Mode) -> Result<(Var, BatchStats)> {
        let (n, rows) = self.to_rows(x)?;
        if mode == Mode::Train && self.cfg.use_batchnorm && n < 2 {
            return Err(Error::InvalidArgument(
                "batch normalisation in train mode needs at least 2 samples".into(),
            ));
        }
        self.params.check_binding(bound)?;
        let entries = self.params.entries();
        let mut k = 0;
        let mut next = |tape: &mut Tape| {
            let v = ParamSet::var(bound, tape, entries, k);
            k += 1;
            v
        };

        let (_, mut h, mut w) = self.cfg.input_shape;
        let mut channels = self.cfg.input_shape.0;
        let mut cur = tape.constant(rows);
        let mut stats = Vec::new();
        for (i, &cout) in self.cfg.widths.iter().enumerate() {
            let geom = ConvGeometry {
                batch: n,
                height: h,
                width: w,
                channels,
                kernel: KERNEL,
                stride: 2,
                padding: 1,
            };
            let cols = tape.im2col(cur, geom)?;
            let weight = next(tape);
            let y = tape.matmul(cols, weight)?;
            let y = if self.cfg.use_batchnorm {
                let (gamma, beta) = (next(tape), next(tape));
                let (normed, batch) = batchnorm(tape, y, &self.running[i], mode)?;
                stats.extend(batch);
                let scaled = tape.mul(normed, gamma)?;
                tape.add(scaled, beta)?
            } else {
                let bias = next(tape);
                tape.add(y, bias)?
            };
            cur = tape.relu(y)?;
            (h, w, channels) = (geom.out_height(), geom.out_width(), cout);
        }
        let grid = tape.reshape(cur, vec![n, h * w, channels])?;
        let pooled = tape.mean_axis(grid, 1)?;
        let (fc_w, fc_b) = (next(tape), next(tape));
        let out = affine(tape, pooled, fc_w, fc_b, "encoder_forward")?;
        Ok((out, BatchStats(stats)))
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        self.params.bind(tape)
    }

    /// Records a forward pass on `tape`. In train mode with batch
    /// normalisation the running statistics are updated.
    pub fn forward(&mut self, tape: &mut Tape, x: &Tensor, mode: Mode) -> Result<(Var, Bound)> {
        let bound = self.bind(tape);
        let out = self.forward_bound(tape, &bound, x, mode)?;
        Ok((out, bound))
    }

    /// Forward pass reusing an existing binding, so several passes share one
    /// set of parameter nodes.
    pub fn forward_bound(&mut self, tape: &mut Tape, bound: &Bound, x: &Tensor, mode: Mode) -> Result<Var> {
        let (out, stats) = self.forward_impl(tape, bound, x, mode)?;
        for (running, (mean, var)) in self.running.iter_mut().zip(stats.0) {
            let blend = |r: &mut Tensor, b: &[f64]| {
                r.data_mut()
                    .iter_mut()
                    .zip(b)
                    .for_each(|(r, b)| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b);
            };
            blend(&mut running.mean, &mean);
            blend(&mut running.var, &var);
        }
        Ok(out)
    }

    /// Eval-mode forward with every parameter recorded as a constant.
    pub fn eval_forward(&self, tape: &mut Tape, x: &Tensor) -> Result<Var> {
        let bound = Bound(vec![None; self.params.entries.len()]);
        Ok(self.forward_impl(tape, &bound, x, Mode::Eval)?.0)
    }

    /// Eval-mode features of `x`, computed `batch_size` images at a time.
    pub fn encode(&self, x: &Tensor, batch_size: usize) -> Result<Tensor> {
        map_batches(x, batch_size, self.cfg.feature_dim, |chunk| {
            let mut tape = Tape::new();
            let out = self.eval_forward(&mut tape, chunk)?;
            Ok(tape.value(out).clone())
        })
    }
}

/// Applies `f` to consecutive row blocks of `x` and stacks the `(rows, width)`
/// results.
pub(crate) fn map_batches(
    x: &Tensor,
    batch_size: usize,
    width: usize,
    mut f: impl FnMut(&Tensor) -> Result<Tensor>,
) -> Result<Tensor> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let n = x.shape().first().copied().unwrap_or(0);
    let mut data = Vec::with_capacity(n * width);
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(batch_size) {
        data.extend_from_slice(f(&x.select_rows(chunk))?.data());
    }
    Tensor::new(vec![n, width], data)
}

/// Per-channel normalisation of `(rows, channels)` activations. Returns the
/// batch mean and unbiased variance in train mode.
fn batchnorm(tape: &mut Tape, y: Var, running: &Running, mode: Mode) -> Result<(Var, Option<(Vec<f64>, Vec<f64>)>)> {
    let eps = tape.constant(Tensor::scalar(BN_EPS));
    match mode {
        Mode::Train => {
            let rows = tape.shape(y)[0];
            let mean = tape.mean_axis(y, 0)?;
            let centered = tape.sub(y, mean)?;
            let sq = tape.mul(centered, centered)?;
            let var = tape.mean_axis(sq, 0)?;
            let shifted = tape.add(var, eps)?;
            let std = tape.sqrt(shifted)?;
            let normed = tape.div(centered, std)?;
            let correction = rows as f64 / (rows as f64 - 1.0);
            let batch_var = tape.value(var).data().iter().map(|v| v * correction).collect();
            Ok((normed, Some((tape.value(mean).data().to_vec(), batch_var))))
        }
        Mode::Eval => {
            let mean = tape.constant(running.mean.clone());
            let std = running.var.data().iter().map(|v| (v + BN_EPS).sqrt()).collect::<Vec<_>>();
            let std = tape.constant(Tensor::vector(&std));
            let centered = tape.sub(y, mean)?;
            Ok((tape.div(centered, std)?, None))
        }
    }
}

impl Module for Encoder {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn buffers(&self) -> Vec<(String, &Tensor)> {
        self.running
            .iter()
            .enumerate()
            .flat_map(|(i, r)| {
                [
                    (format!("bn{i}.running_mean"), &r.mean),
                    (format!("bn{i}.running_var"), &r.var),
                ]
            })
            .collect()
    }

    fn buffer_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let rest = name.strip_prefix("bn")?;
        let (idx, field) = rest.split_once('.')?;
        let r = self.running.get_mut(idx.parse::<usize>().ok()?)?;
        match field {
            "running_mean" => Some(&mut r.mean),
            "running_var" => Some(&mut r.var),
            _ => None,
        }
    }
}

/// Affine head `z W + b` shared by the classifier and the projector.
#[derive(Clone, Debug, PartialEq)]
struct Linear {
    params: ParamSet,
}

impl Linear {
    fn new(input: usize, output: usize, seed: u64) -> Self {
        Linear {
            params: ParamSet::new(vec![
                ("weight".into(), uniform_init(vec![input, output], input, seed)),
                ("bias".into(), uniform_init(vec![output], input, derive_seed(seed, &[1]))),
            ]),
        }
    }

    fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (input, output) = weight.dims2()?;
        if bias.shape() != [output] {
            return Err(Error::shape("linear", format!("bias {:?} for {input}x{output} weight", bias.shape())));
        }
        Ok(Linear {
            params: ParamSet::new(vec![("weight".into(), weight), ("bias".into(), bias)]),
        })
    }

    fn forward_bound(&self, tape: &mut Tape, bound: &Bound, z: Var, op: &'static str) -> Result<Var> {
        self.params.check_binding(bound)?;
        let entries = self.params.entries();
        let w = ParamSet::var(bound, tape, entries, 0);
        let b = ParamSet::var(bound, tape, entries, 1);
        affine(tape, z, w, b, op)
    }

    fn apply(&self, z: &Tensor, op: &'static str) -> Result<Tensor> {
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let out = self.forward_bound(&mut tape, &Bound(vec![None; 2]), zv, op)?;
        Ok(tape.value(out).clone())
    }

    fn dims(&self) -> (usize, usize) {
        let s = self.params.entries[0].1.shape();
        (s[0], s[1])
    }
}

/// Linear classifier `h`: `(batch, D) -> (batch, C)` logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier(Linear);

impl Classifier {
    pub fn new(feature_dim: usize, classes: usize, seed: u64) -> Self {
        Classifier(Linear::new(feature_dim, classes, seed))
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        Linear::from_parts(weight, bias).map(Classifier)
    }

    pub fn feature_dim(&self) -> usize {
        self.0.dims().0
    }

    pub fn classes(&self) -> usize {
        self.0.dims().1
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        self.0.params.bind(tape)
    }

    pub fn forward(&self, tape: &mut Tape, z: Var) -> Result<(Var, Bound)> {
        let bound = self.bind(tape);
        Ok((self.forward_bound(tape, &bound, z)?, bound))
    }

    pub fn forward_bound(&self, tape: &mut Tape, bound: &Bound, z: Var) -> Result<Var> {
        self.0.forward_bound(tape, bound, z, "classifier_forward")
    }

    pub fn logits(&self, z: &Tensor) -> Result<Tensor> {
        self.0.apply(z, "classifier_forward")
    }

    /// Arg-max class of each row of `z`; ties go to the lowest index.
    pub fn predict(&self, z: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(z)?;
        Ok(argmax_rows(&logits))
    }
}

pub fn argmax_rows(m: &Tensor) -> Vec<usize> {
    let cols = m.shape()[1];
    m.data()
        .chunks_exact(cols)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Dimension-preserving linear projector `π`.
#[derive(Clone, Debug, PartialEq)]
pub struct Projector(Linear);

impl Projector {
    pub fn new(dim: usize, seed: u64) -> Self {
        Projector(Linear::new(dim, dim, seed))
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        let lin = Linear::from_parts(weight, bias)?;
        let (i, o) = lin.dims();
        if i != o {
            return Err(Error::shape("projector", format!("weight must be square, got {i}x{o}")));
        }
        Ok(Projector(lin))
    }

    pub fn dim(&self) -> usize {
        self.0.dims().0
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        self.0.params.bind(tape)
    }

    pub fn forward(&self, tape: &mut Tape, z: Var) -> Result<(Var, Bound)> {
        let bound = self.bind(tape);
        Ok((self.forward_bound(tape, &bound, z)?, bound))
    }

    pub fn forward_bound(&self, tape: &mut Tape, bound: &Bound, z: Var) -> Result<Var> {
        self.0.forward_bound(tape, bound, z, "projector_forward")
    }

    pub fn apply(&self, z: &Tensor) -> Result<Tensor> {
        self.0.apply(z, "projector_forward")
    }
}

macro_rules! linear_module {
    ($t:ty) => {
        impl Module for $t {
            fn params(&self) -> &ParamSet {
                &self.0.params
            }

            fn params_mut(&mut self) -> &mut ParamSet {
                &mut self.0.params
            }
        }
    };
}

linear_module!(Classifier);
linear_module!(Projector);

/// Writes `(u32 name length, name, CTAT tensor)` records for every entry.
pub fn save_checkpoint(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    write_atomic(path, |w| {
        for (name, t) in entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            t.write_ctat(w)?;
        }
        Ok(())
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut entries = Vec::new();
    loop {
        let mut first = [0u8; 1];
        match r.read(&mut first) {
            Ok(0) => break,
            Ok(_) => {}
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
        let mut rest = [0u8; 3];
        r.read_exact(&mut rest)?;
        let len = u32::from_le_bytes([first[0], rest[0], rest[1], rest[2]]) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("checkpoint name is not UTF-8".into()))?;
        entries.push((name, Tensor::read_ctat(&mut r)?));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests;
