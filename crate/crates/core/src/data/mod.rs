//! Labelled image datasets, augmentation pairs, corruptions and batching.
//!
//! Images are `(N, channels, height, width)` tensors with values in `[0, 1]`.

mod augment;
mod batch;
mod corrupt;
mod shapes;

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use augment::{augment_pair, AugmentationConfig};
pub use batch::{batch_indices, batch_iter, Batch};
pub use corrupt::{corrupt, CorruptionKind, CorruptionSpec, SEVERITY_LEVELS};
pub use shapes::{generate_synthetic_dataset, SHAPE_CHANNELS, SHAPE_NAMES};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    SourceTrain,
    SourceTest,
    Target,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::shape(
                "Dataset",
                format!("images must be (N, C, H, W), got {:?}", images.shape()),
            ));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::shape(
                "Dataset",
                format!("{} images, {} labels", images.shape()[0], labels.len()),
            ));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidLabel { label, classes });
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("pixel values must lie in [0, 1]".into()));
        }
        let mut seen = vec![false; classes];
        labels.iter().for_each(|&l| seen[l] = true);
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::MissingClass(missing));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
            split,
        })
    }

    /// Reads an image tensor `(N, C, H, W)` and a label tensor `(N)` in the
    /// `CTAT` format.
    pub fn load(images: &Path, labels: &Path, split: Split) -> Result<Self> {
        let images_t = Tensor::read_ctat(&mut BufReader::new(File::open(images)?))?;
        let labels_t = Tensor::read_ctat(&mut BufReader::new(File::open(labels)?))?;
        if labels_t.rank() != 1 {
            return Err(Error::Format(format!(
                "labels must be rank 1, got {:?}",
                labels_t.shape()
            )));
        }
        let labels = labels_t
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::Format(format!("label {v} is not a class index")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        Dataset::new(images_t, labels, classes, split)
    }

    pub fn save(&self, images: &Path, labels: &Path) -> Result<()> {
        self.images.save(images)?;
        Tensor::vector(&self.labels.iter().map(|&l| l as f64).collect::<Vec<_>>()).save(labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// `(channels, height, width)` of each image.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    /// Label-free view of the images, the only thing adaptation code sees.
    pub fn unlabeled(&self) -> ImageView<'_> {
        ImageView {
            images: &self.images,
        }
    }

    /// Deterministic split into the first `n_first` samples and the rest.
    pub fn split_at(&self, n_first: usize, first: Split, second: Split) -> Result<(Dataset, Dataset)> {
        let idx: Vec<usize> = (0..self.len()).collect();
        let (a, b) = idx.split_at(n_first.min(self.len()));
        Ok((self.subset(a, first)?, self.subset(b, second)?))
    }

    pub fn subset(&self, indices: &[usize], split: Split) -> Result<Dataset> {
        Dataset::new(
            self.images.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.classes,
            split,
        )
    }

    /// Same labels over transformed images.
    pub fn with_images(&self, images: Tensor, split: Split) -> Result<Dataset> {
        if images.shape() != self.images.shape() {
            return Err(Error::shape(
                "Dataset::with_images",
                format!("{:?} vs {:?}", images.shape(), self.images.shape()),
            ));
        }
        Dataset::new(images, self.labels.clone(), self.classes, split)
    }

    /// Corrupted copy of this dataset tagged as target data.
    pub fn corrupted(&self, spec: CorruptionSpec, seed: u64) -> Result<Dataset> {
        self.with_images(corrupt(&self.images, spec, seed)?, Split::Target)
    }
}

/// Images without labels.
#[derive(Clone, Copy, Debug)]
pub struct ImageView<'a> {
    images: &'a Tensor,
}

impl<'a> ImageView<'a> {
    pub fn new(images: &'a Tensor) -> Self {
        ImageView { images }
    }

    pub fn images(&self) -> &'a Tensor {
        self.images
    }

    pub fn len(&self) -> usize {
        self.images.shape().first().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Tensor {
        self.images.select_rows(indices)
    }
}
