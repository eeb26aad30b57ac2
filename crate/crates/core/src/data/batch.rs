use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub images: Tensor,
    pub labels: Vec<usize>,
}

/// One epoch of index batches over `n` samples. A trailing batch with fewer
/// than two items is dropped.
pub fn batch_indices(n: usize, batch_size: usize, shuffle: bool, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut seeded(seed));
    }
    Ok(order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2 || (batch_size == 1 && c.len() == 1))
        .map(<[usize]>::to_vec)
        .collect())
}

pub fn batch_iter(
    ds: &Dataset,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
) -> Result<impl Iterator<Item = Batch> + '_> {
    let batches = batch_indices(ds.len(), batch_size, shuffle, seed)?;
    Ok(batches.into_iter().map(move |indices| Batch {
        images: ds.images().select_rows(&indices),
        labels: indices.iter().map(|&i| ds.labels()[i]).collect(),
        indices,
    }))
}
