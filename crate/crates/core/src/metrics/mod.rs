//! Accuracy, Davies–Bouldin index, median class centroids and centroid drift.

mod report;

pub use report::{IterationRecord, RunReport};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(
            "accuracy",
            format!("{} predictions, {} labels", predictions.len(), labels.len()),
        ));
    }
    if labels.is_empty() {
        return Err(Error::Empty("accuracy over no samples"));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Accuracy restricted to each class in `0..classes`; `None` for classes
/// with no samples.
pub fn per_class_accuracy(predictions: &[usize], labels: &[usize], classes: usize) -> Vec<Option<f64>> {
    let mut hits = vec![0usize; classes];
    let mut counts = vec![0usize; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if l < classes {
            counts[l] += 1;
            hits[l] += usize::from(p == l);
        }
    }
    hits.iter()
        .zip(&counts)
        .map(|(&h, &c)| (c > 0).then(|| h as f64 / c as f64))
        .collect()
}

fn check_features(features: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    let (n, d) = features.dims2()?;
    if n != labels.len() {
        return Err(Error::shape("metrics", format!("{n} feature rows, {} labels", labels.len())));
    }
    if n == 0 {
        return Err(Error::Empty("feature matrix"));
    }
    Ok((n, d))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Davies–Bouldin index over the classes present in `labels`, using mean
/// centroids and mean Euclidean scatter. Lower is better separated.
pub fn davies_bouldin(features: &Tensor, labels: &[usize]) -> Result<f64> {
    let (_, d) = check_features(features, labels)?;
    let mut present: Vec<usize> = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::InvalidArgument(
            "Davies–Bouldin index needs at least two classes".into(),
        ));
    }
    let slot = |label: usize| present.binary_search(&label).unwrap();
    let k = present.len();

    let mut centroids = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        let c = slot(l);
        counts[c] += 1;
        centroids[c].iter_mut().zip(features.row(i)).for_each(|(a, b)| *a += b);
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= *n as f64);
    }
    let mut scatter = vec![0.0; k];
    for (i, &l) in labels.iter().enumerate() {
        let c = slot(l);
        scatter[c] += euclidean(features.row(i), &centroids[c]);
    }
    for (s, n) in scatter.iter_mut().zip(&counts) {
        *s /= *n as f64;
    }

    let mut total = 0.0;
    for i in 0..k {
        let mut worst = f64::NEG_INFINITY;
        for j in (0..k).filter(|&j| j != i) {
            let dist = euclidean(&centroids[i], &centroids[j]);
            if dist == 0.0 {
                return Err(Error::CoincidentCentroids(present[i], present[j]));
            }
            worst = worst.max((scatter[i] + scatter[j]) / dist);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

/// Per-class coordinate-wise median feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct CentroidSet {
    rows: Vec<Vec<f64>>,
}

impl CentroidSet {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::shape("CentroidSet", "ragged centroid rows"));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "CentroidSet" });
        }
        Ok(CentroidSet { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn classes(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Coordinate-wise median of each class in `0..classes`.
pub fn median_centroids(features: &Tensor, labels: &[usize], classes: usize) -> Result<CentroidSet> {
    let (_, d) = check_features(features, labels)?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::InvalidLabel { label: l, classes });
        }
        members[l].push(i);
    }
    let mut rows = Vec::with_capacity(classes);
    for (c, idx) in members.iter().enumerate() {
        if idx.is_empty() {
            return Err(Error::MissingClass(c));
        }
        let mut column = Vec::with_capacity(idx.len());
        let row = (0..d)
            .map(|j| {
                column.clear();
                column.extend(idx.iter().map(|&i| features.row(i)[j]));
                median(&mut column)
            })
            .collect();
        rows.push(row);
    }
    CentroidSet::new(rows)
}

/// Mean Euclidean distance between corresponding class centroids.
pub fn centroid_drift(before: &CentroidSet, after: &CentroidSet) -> Result<f64> {
    if before.classes() != after.classes() || before.dim() != after.dim() {
        return Err(Error::shape(
            "centroid_drift",
            format!(
                "({}, {}) vs ({}, {})",
                before.classes(),
                before.dim(),
                after.classes(),
                after.dim()
            ),
        ));
    }
    if before.classes() == 0 {
        return Err(Error::Empty("centroid set"));
    }
    let total: f64 = before
        .rows
        .iter()
        .zip(&after.rows)
        .map(|(a, b)| euclidean(a, b))
        .sum();
    Ok(total / before.classes() as f64)
}

#[cfg(test)]
mod tests;
