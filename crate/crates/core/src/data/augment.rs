//! Two independently sampled views per image: random square crop resized
//! back to full size, horizontal flip, brightness and contrast jitter.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, SeededRng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    /// Range of the crop's area as a fraction of the image.
    pub crop_scale: (f64, f64),
    pub flip_prob: f64,
    /// Additive brightness offset drawn from `[-b, b]`.
    pub brightness: f64,
    /// Contrast factor drawn from `[1 - c, 1 + c]`, applied about the image mean.
    pub contrast: f64,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            crop_scale: (0.5, 1.0),
            flip_prob: 0.5,
            brightness: 0.2,
            contrast: 0.3,
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    /// A configuration under which both views equal the input.
    pub fn identity() -> Self {
        AugmentationConfig {
            crop_scale: (1.0, 1.0),
            flip_prob: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::config(
                "augmentation.crop_scale",
                format!("need 0 < lo <= hi <= 1, got ({lo}, {hi})"),
            ));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::config("augmentation.flip_prob", "must lie in [0, 1]"));
        }
        if !(self.brightness >= 0.0 && self.contrast >= 0.0 && self.contrast <= 1.0) {
            return Err(Error::config(
                "augmentation.brightness",
                "jitter ranges must be non-negative (contrast at most 1)",
            ));
        }
        Ok(())
    }
}

fn bilinear_crop(src: &[f64], size: usize, top: usize, left: usize, side: usize, dst: &mut [f64]) {
    let scale = side as f64 / size as f64;
    for y in 0..size {
        let sy = ((y as f64 + 0.5) * scale - 0.5).clamp(0.0, (side - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(side - 1);
        let fy = sy - y0 as f64;
        for x in 0..size {
            let sx = ((x as f64 + 0.5) * scale - 0.5).clamp(0.0, (side - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(side - 1);
            let fx = sx - x0 as f64;
            let at = |yy: usize, xx: usize| src[(top + yy) * size + left + xx];
            let top_row = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bottom_row = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            dst[y * size + x] = top_row * (1.0 - fy) + bottom_row * fy;
        }
    }
}

/// One augmented copy of a `(channels, size, size)` image.
fn augment_one(img: &[f64], channels: usize, size: usize, cfg: &AugmentationConfig, rng: &mut SeededRng) -> Vec<f64> {
    let plane = size * size;
    let (lo, hi) = cfg.crop_scale;
    let mut side = 0;
    for _ in 0..16 {
        let area = if lo < hi { rng.random_range(lo..=hi) } else { lo };
        side = (area.sqrt() * size as f64).round() as usize;
        if side >= 1 {
            break;
        }
    }
    let side = side.clamp(1, size);
    let top = rng.random_range(0..=size - side);
    let left = rng.random_range(0..=size - side);
    let flip = cfg.flip_prob > 0.0 && rng.random_bool(cfg.flip_prob);
    let brightness = if cfg.brightness > 0.0 {
        rng.random_range(-cfg.brightness..=cfg.brightness)
    } else {
        0.0
    };
    let contrast = if cfg.contrast > 0.0 {
        Some(rng.random_range(1.0 - cfg.contrast..=1.0 + cfg.contrast))
    } else {
        None
    };

    let mut out = vec![0.0; channels * plane];
    for ch in 0..channels {
        let src = &img[ch * plane..(ch + 1) * plane];
        let dst = &mut out[ch * plane..(ch + 1) * plane];
        if side == size {
            dst.copy_from_slice(src);
        } else {
            bilinear_crop(src, size, top, left, side, dst);
        }
        if flip {
            for row in dst.chunks_exact_mut(size) {
                row.reverse();
            }
        }
    }
    if brightness != 0.0 {
        out.iter_mut().for_each(|v| *v += brightness);
    }
    if let Some(k) = contrast {
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        out.iter_mut().for_each(|v| *v = (*v - mean) * k + mean);
    }
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    out
}

/// Two augmented views of each image in an `(N, C, S, S)` batch.
pub fn augment_pair(x: &Tensor, cfg: &AugmentationConfig, seed: u64) -> Result<(Tensor, Tensor)> {
    cfg.validate()?;
    let s = x.shape();
    if s.len() != 4 || s[2] != s[3] {
        return Err(Error::shape("augment_pair", format!("expected square (N, C, S, S), got {s:?}")));
    }
    let (n, channels, size) = (s[0], s[1], s[2]);
    let stride = channels * size * size;
    let mut first = Vec::with_capacity(x.len());
    let mut second = Vec::with_capacity(x.len());
    for i in 0..n {
        let img = &x.data()[i * stride..(i + 1) * stride];
        let mut rng = seeded(derive_seed(seed ^ cfg.seed, &[i as u64]));
        first.extend(augment_one(img, channels, size, cfg, &mut rng));
        second.extend(augment_one(img, channels, size, cfg, &mut rng));
    }
    Ok((Tensor::new(s.to_vec(), first)?, Tensor::new(s.to_vec(), second)?))
}
