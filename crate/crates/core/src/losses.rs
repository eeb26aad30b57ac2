//! Cosine similarity, the contrastive objective, cross-entropy and the
//! cross-encoder alignment objective.
//!
//! The contrastive objectives take anchors from one embedding set only. For
//! anchor `a_i` with positive `p_i`, the competitor set is every row of
//! `A ∪ P` except `a_i` itself:
//!
//! ```text
//! l_i = -log( exp(sim(a_i, p_i)/τ) / Σ_{s ∈ A∪P, s ≠ a_i} exp(sim(a_i, s)/τ) )
//! ```
//!
//! The contrastive loss is `Σ_i l_i` with `(A, P) = (Ĥ, H̃)`. The alignment
//! loss is the same sum for `(Ĥ, W)` plus the one for `(H̃, W)`, where `W`
//! holds the frozen supervised encoder's features.
//!
//! Denominators are evaluated as a log-sum-exp with the per-anchor maximum
//! subtracted, which keeps `τ = 0.01` (logits up to ±100) finite.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau.is_finite() {
            Ok(Temperature(tau))
        } else {
            Err(Error::InvalidArgument(format!(
                "temperature must be positive and finite, got {tau}"
            )))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;
    fn try_from(tau: f64) -> Result<Self> {
        Temperature::new(tau)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

/// Which side of a contrastive pair a set of embeddings plays.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingRole {
    Hat,
    Tilde,
    Teacher,
}

/// A `(B, D)` batch of embeddings with no zero-norm rows.
#[derive(Clone, Debug)]
pub struct EmbeddingSet {
    role: EmbeddingRole,
    matrix: Tensor,
}

impl EmbeddingSet {
    pub fn new(role: EmbeddingRole, matrix: Tensor) -> Result<Self> {
        let (b, _) = matrix.dims2()?;
        if b == 0 {
            return Err(Error::Empty("embedding set"));
        }
        check_nonzero_rows(&matrix)?;
        Ok(EmbeddingSet { role, matrix })
    }

    pub fn role(&self) -> EmbeddingRole {
        self.role
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }
}

/// Whether the contrastive loss anchors on the first view only (as written)
/// or on both views.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchoring {
    #[default]
    OneSided,
    Symmetric,
}

fn check_nonzero_rows(m: &Tensor) -> Result<()> {
    let (b, _) = m.dims2()?;
    if (0..b).any(|i| m.row(i).iter().all(|&v| v == 0.0)) {
        return Err(Error::ZeroNorm);
    }
    Ok(())
}

pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("cosine_sim", format!("{} vs {}", u.len(), v.len())));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok(dot / (nu * nv))
}

/// Pairwise cosine similarities between rows of `a: (B, D)` and `b: (M, D)`.
pub fn cosine_sim_matrix(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let (rows_a, da) = tape.value(a).dims2()?;
    let (rows_b, db) = tape.value(b).dims2()?;
    if da != db {
        return Err(Error::shape("cosine_sim_matrix", format!("width {da} vs {db}")));
    }
    let na = tape.l2_norm_rows(a)?;
    let nb = tape.l2_norm_rows(b)?;
    if tape.value(na).data().contains(&0.0) || tape.value(nb).data().contains(&0.0) {
        return Err(Error::ZeroNorm);
    }
    let bt = tape.transpose(b)?;
    let dots = tape.matmul(a, bt)?;
    let col = tape.reshape(na, vec![rows_a, 1])?;
    let row = tape.reshape(nb, vec![1, rows_b])?;
    let norms = tape.matmul(col, row)?;
    tape.div(dots, norms)
}

/// Σ_i [log Σ_{j ∈ keep_i} exp(logits_ij) − logits_{i,target_i}], stabilized
/// by subtracting the row maximum over `keep_i`.
fn masked_nll_sum(tape: &mut Tape, logits: Var, keep: &[bool], target: &[usize]) -> Result<Var> {
    let (rows, cols) = tape.value(logits).dims2()?;
    let values = tape.value(logits).data();
    let mut shift = vec![0.0; rows * cols];
    let mut row_max = vec![0.0; rows];
    for i in 0..rows {
        let m = (0..cols)
            .filter(|&j| keep[i * cols + j])
            .map(|j| values[i * cols + j])
            .fold(f64::NEG_INFINITY, f64::max);
        row_max[i] = m;
        shift[i * cols..(i + 1) * cols].fill(m);
    }
    let mask: Vec<f64> = keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
    let mut onehot = vec![0.0; rows * cols];
    for (i, &t) in target.iter().enumerate() {
        onehot[i * cols + t] = 1.0;
    }

    let shift = tape.constant(Tensor::new(vec![rows, cols], shift)?);
    let mask = tape.constant(Tensor::new(vec![rows, cols], mask)?);
    let onehot = tape.constant(Tensor::new(vec![rows, cols], onehot)?);
    let row_max = tape.constant(Tensor::new(vec![rows], row_max)?);

    let centered = tape.sub(logits, shift)?;
    let e = tape.exp(centered)?;
    let e = tape.mul(e, mask)?;
    let denom = tape.sum_axis(e, 1)?;
    let lse = tape.log(denom)?;
    let lse = tape.add(lse, row_max)?;
    let picked = tape.mul(logits, onehot)?;
    let positive = tape.sum_axis(picked, 1)?;
    let per_row = tape.sub(lse, positive)?;
    tape.sum_all(per_row)
}

/// One anchored contrastive term: anchors `a`, positives `p`, competitors
/// `A ∪ P \ {a_i}`.
fn anchored_term(tape: &mut Tape, anchors: Var, positives: Var, tau: Temperature) -> Result<Var> {
    let b = tape.shape(anchors)[0];
    let pool = tape.concat_rows(&[anchors, positives])?;
    let sim = cosine_sim_matrix(tape, anchors, pool)?;
    let logits = tape.scalar_scale(sim, 1.0 / tau.get())?;
    let cols = 2 * b;
    let mut keep = vec![true; b * cols];
    for i in 0..b {
        keep[i * cols + i] = false;
    }
    let target: Vec<usize> = (0..b).map(|i| b + i).collect();
    masked_nll_sum(tape, logits, &keep, &target)
}

fn check_pair(tape: &Tape, a: Var, b: Var) -> Result<()> {
    let (ra, da) = tape.value(a).dims2()?;
    let (rb, db) = tape.value(b).dims2()?;
    if ra == 0 {
        return Err(Error::Empty("contrastive batch"));
    }
    if ra != rb || da != db {
        return Err(Error::shape(
            "contrastive",
            format!("({ra}, {da}) vs ({rb}, {db})"),
        ));
    }
    Ok(())
}

/// Contrastive loss over two `(B, D)` views recorded on `tape`.
pub fn contrastive_loss_on(
    tape: &mut Tape,
    hat: Var,
    tilde: Var,
    tau: Temperature,
    anchoring: Anchoring,
) -> Result<Var> {
    check_pair(tape, hat, tilde)?;
    let forward = anchored_term(tape, hat, tilde, tau)?;
    match anchoring {
        Anchoring::OneSided => Ok(forward),
        Anchoring::Symmetric => {
            let backward = anchored_term(tape, tilde, hat, tau)?;
            tape.add(forward, backward)
        }
    }
}

/// Cross-encoder alignment loss of two views against teacher features.
pub fn alignment_loss_on(
    tape: &mut Tape,
    hat: Var,
    tilde: Var,
    teacher: Var,
    tau: Temperature,
) -> Result<Var> {
    check_pair(tape, hat, tilde)?;
    check_pair(tape, hat, teacher)?;
    let first = anchored_term(tape, hat, teacher, tau)?;
    let second = anchored_term(tape, tilde, teacher, tau)?;
    tape.add(first, second)
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn cross_entropy_on(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (b, c) = tape.value(logits).dims2()?;
    if b == 0 {
        return Err(Error::Empty("cross-entropy batch"));
    }
    if labels.len() != b {
        return Err(Error::shape("cross_entropy", format!("{b} rows, {} labels", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidLabel { label, classes: c });
    }
    let total = masked_nll_sum(tape, logits, &vec![true; b * c], labels)?;
    tape.scalar_scale(total, 1.0 / b as f64)
}

pub fn contrastive_loss(hat: &EmbeddingSet, tilde: &EmbeddingSet, tau: Temperature) -> Result<f64> {
    let mut tape = Tape::new();
    let h = tape.constant(hat.matrix.clone());
    let t = tape.constant(tilde.matrix.clone());
    let loss = contrastive_loss_on(&mut tape, h, t, tau, Anchoring::OneSided)?;
    Ok(tape.value(loss).item())
}

pub fn alignment_loss(
    hat: &EmbeddingSet,
    tilde: &EmbeddingSet,
    teacher: &EmbeddingSet,
    tau: Temperature,
) -> Result<f64> {
    let mut tape = Tape::new();
    let h = tape.constant(hat.matrix.clone());
    let t = tape.constant(tilde.matrix.clone());
    let w = tape.constant(teacher.matrix.clone());
    let loss = alignment_loss_on(&mut tape, h, t, w, tau)?;
    Ok(tape.value(loss).item())
}

pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let z = tape.constant(logits.clone());
    let loss = cross_entropy_on(&mut tape, z, labels)?;
    Ok(tape.value(loss).item())
}

/// Row-wise softmax of a `(B, C)` matrix.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let (b, c) = logits.dims2()?;
    let mut out = Vec::with_capacity(b * c);
    for i in 0..b {
        let row = logits.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / z));
    }
    Tensor::new(vec![b, c], out)
}

#[cfg(test)]
mod tests;
