//! Label-preserving image corruptions at severities 0 (identity) to 5.
//!
//! Severity tables, indexed by severity:
//!
//! | kind             | parameter                         | 0    | 1    | 2    | 3    | 4    | 5    |
//! |------------------|-----------------------------------|------|------|------|------|------|------|
//! | `gaussian_noise` | noise std                         | 0    | 0.04 | 0.08 | 0.12 | 0.18 | 0.26 |
//! | `shot_noise`     | photons per unit intensity        | -    | 60   | 25   | 12   | 5    | 3    |
//! | `defocus_blur`   | Gaussian blur std (pixels)        | 0    | 0.5  | 0.75 | 1.0  | 1.25 | 1.5  |
//! | `contrast`       | contrast factor about image mean  | 1    | 0.75 | 0.5  | 0.4  | 0.3  | 0.2  |
//! | `brightness`     | additive offset                   | 0    | 0.1  | 0.2  | 0.3  | 0.4  | 0.5  |
//! | `pixelate`       | resolution factor                 | 1    | 0.8  | 0.6  | 0.5  | 0.4  | 0.3  |
//!
//! Outputs are clamped to `[0, 1]`.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, SeededRng};
use crate::tensor::Tensor;

pub const SEVERITY_LEVELS: u8 = 5;

const GAUSSIAN_STD: [f64; 6] = [0.0, 0.04, 0.08, 0.12, 0.18, 0.26];
const SHOT_PHOTONS: [f64; 6] = [f64::INFINITY, 60.0, 25.0, 12.0, 5.0, 3.0];
const BLUR_STD: [f64; 6] = [0.0, 0.5, 0.75, 1.0, 1.25, 1.5];
const CONTRAST_FACTOR: [f64; 6] = [1.0, 0.75, 0.5, 0.4, 0.3, 0.2];
const BRIGHTNESS_SHIFT: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
const PIXELATE_FACTOR: [f64; 6] = [1.0, 0.8, 0.6, 0.5, 0.4, 0.3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    DefocusBlur,
    Contrast,
    Brightness,
    Pixelate,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 6] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::DefocusBlur,
        CorruptionKind::Contrast,
        CorruptionKind::Brightness,
        CorruptionKind::Pixelate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ShotNoise => "shot_noise",
            CorruptionKind::DefocusBlur => "defocus_blur",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Pixelate => "pixelate",
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown corruption kind `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8) -> Result<Self> {
        let spec = CorruptionSpec { kind, severity };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.severity > SEVERITY_LEVELS {
            return Err(Error::InvalidArgument(format!(
                "severity {} outside 0..={SEVERITY_LEVELS}",
                self.severity
            )));
        }
        Ok(())
    }
}

impl fmt::Display for CorruptionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.kind, self.severity)
    }
}

fn gaussian_kernel(std: f64) -> Vec<f64> {
    let radius = (3.0 * std).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * std * std)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Separable blur of one `size x size` plane with clamped borders.
fn blur_plane(plane: &mut [f64], size: usize, kernel: &[f64]) {
    let radius = (kernel.len() / 2) as isize;
    let clamp = |i: isize| i.clamp(0, size as isize - 1) as usize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..size {
        for x in 0..size {
            tmp[y * size + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * plane[y * size + clamp(x as isize + k as isize - radius)])
                .sum();
        }
    }
    for y in 0..size {
        for x in 0..size {
            plane[y * size + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * tmp[clamp(y as isize + k as isize - radius) * size + x])
                .sum();
        }
    }
}

fn pixelate_plane(plane: &mut [f64], size: usize, factor: f64) {
    let low = ((size as f64 * factor).round() as usize).clamp(1, size);
    let cell = |p: usize| p * low / size;
    let mut sums = vec![0.0; low * low];
    let mut counts = vec![0usize; low * low];
    for y in 0..size {
        for x in 0..size {
            let c = cell(y) * low + cell(x);
            sums[c] += plane[y * size + x];
            counts[c] += 1;
        }
    }
    for y in 0..size {
        for x in 0..size {
            let c = cell(y) * low + cell(x);
            plane[y * size + x] = sums[c] / counts[c] as f64;
        }
    }
}

/// Applies the corruption to one `(channels, h, w)` image without clamping.
fn corrupt_image(img: &mut [f64], channels: usize, size: usize, spec: CorruptionSpec, rng: &mut SeededRng) {
    let s = spec.severity as usize;
    let plane = size * size;
    match spec.kind {
        CorruptionKind::GaussianNoise => {
            let normal = Normal::new(0.0, GAUSSIAN_STD[s]).expect("finite std");
            img.iter_mut().for_each(|v| *v += normal.sample(rng));
        }
        CorruptionKind::ShotNoise => {
            let photons = SHOT_PHOTONS[s];
            for v in img.iter_mut() {
                let rate = v.max(0.0) * photons;
                *v = if rate > 0.0 {
                    Poisson::new(rate).expect("positive rate").sample(rng) / photons
                } else {
                    0.0
                };
            }
        }
        CorruptionKind::DefocusBlur => {
            let kernel = gaussian_kernel(BLUR_STD[s]);
            img.chunks_exact_mut(plane).for_each(|p| blur_plane(p, size, &kernel));
        }
        CorruptionKind::Contrast => {
            let mean = img.iter().sum::<f64>() / img.len() as f64;
            let k = CONTRAST_FACTOR[s];
            img.iter_mut().for_each(|v| *v = (*v - mean) * k + mean);
        }
        CorruptionKind::Brightness => {
            let shift = BRIGHTNESS_SHIFT[s];
            img.iter_mut().for_each(|v| *v += shift);
        }
        CorruptionKind::Pixelate => {
            let f = PIXELATE_FACTOR[s];
            img.chunks_exact_mut(plane).for_each(|p| pixelate_plane(p, size, f));
        }
    }
    debug_assert_eq!(img.len(), channels * plane);
}

fn check_batch(x: &Tensor) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() != 4 || s[2] != s[3] {
        return Err(Error::shape("corrupt", format!("expected square (N, C, S, S), got {s:?}")));
    }
    Ok((s[0], s[1], s[2]))
}

pub(crate) fn corrupt_unclamped(x: &Tensor, spec: CorruptionSpec, seed: u64) -> Result<Tensor> {
    spec.validate()?;
    let (n, channels, size) = check_batch(x)?;
    let mut out = x.clone();
    if spec.severity == 0 {
        return Ok(out);
    }
    let stride = channels * size * size;
    for (i, img) in out.data_mut().chunks_exact_mut(stride).enumerate().take(n) {
        let mut rng = seeded(derive_seed(seed, &[i as u64]));
        corrupt_image(img, channels, size, spec, &mut rng);
    }
    Ok(out)
}

/// Corrupts every image of an `(N, C, S, S)` batch; severity 0 is the
/// identity.
pub fn corrupt(x: &Tensor, spec: CorruptionSpec, seed: u64) -> Result<Tensor> {
    let mut out = corrupt_unclamped(x, spec, seed)?;
    if spec.severity > 0 {
        out.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    Ok(out)
}
