//! Procedural geometric-shape images: the class is the shape; position,
//! scale, rotation and colours are nuisance variables.

use rand::Rng;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::tensor::Tensor;

pub const SHAPE_CHANNELS: usize = 3;

pub const SHAPE_NAMES: [&str; 10] = [
    "disk", "square", "triangle", "plus", "ring", "diamond", "cross", "half-disk", "frame", "bars",
];

const SUPERSAMPLE: usize = 4;

fn plus(x: f64, y: f64) -> bool {
    (x.abs() <= 0.3 && y.abs() <= 1.0) || (y.abs() <= 0.3 && x.abs() <= 1.0)
}

/// Membership test in the shape's local unit frame.
fn inside(class: usize, x: f64, y: f64) -> bool {
    let r2 = x * x + y * y;
    match class {
        0 => r2 <= 1.0,
        1 => x.abs().max(y.abs()) <= 0.85,
        2 => y >= -0.5 && x.abs() <= (1.0 - y) / 3f64.sqrt(),
        3 => plus(x, y),
        4 => (0.3025..=1.0).contains(&r2),
        5 => x.abs() + y.abs() <= 1.1,
        6 => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            plus(s * (x + y), s * (x - y))
        }
        7 => {
            let y = y + 0.4;
            x * x + y * y <= 1.0 && y >= 0.0
        }
        8 => {
            let m = x.abs().max(y.abs());
            m <= 0.9 && m >= 0.5
        }
        9 => x.abs() <= 0.95 && ((y - 0.5).abs() <= 0.2 || (y + 0.5).abs() <= 0.2),
        _ => unreachable!("class index checked by caller"),
    }
}

fn render(class: usize, size: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded(seed);
    let cx = rng.random_range(-0.25..0.25);
    let cy = rng.random_range(-0.25..0.25);
    let scale = rng.random_range(0.45..0.75);
    let theta: f64 = rng.random_range(-0.35..0.35);
    let bg_base = rng.random_range(0.05..0.35);
    let fg_base = rng.random_range(0.55..0.95);
    let bg: Vec<f64> = (0..SHAPE_CHANNELS)
        .map(|_| bg_base + rng.random_range(-0.05..0.05))
        .collect();
    let fg: Vec<f64> = (0..SHAPE_CHANNELS)
        .map(|_| (fg_base + rng.random_range(-0.05..0.05f64)).min(1.0))
        .collect();
    let (sin, cos) = theta.sin_cos();

    let mut coverage = vec![0.0; size * size];
    let step = 2.0 / (size * SUPERSAMPLE) as f64;
    for py in 0..size {
        for px in 0..size {
            let mut hits = 0usize;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let u = -1.0 + ((px * SUPERSAMPLE + sx) as f64 + 0.5) * step - cx;
                    // image rows grow downward; flip so "up" is +y
                    let v = 1.0 - ((py * SUPERSAMPLE + sy) as f64 + 0.5) * step - cy;
                    let lx = (cos * u + sin * v) / scale;
                    let ly = (-sin * u + cos * v) / scale;
                    hits += usize::from(inside(class, lx, ly));
                }
            }
            coverage[py * size + px] = hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
        }
    }
    let mut out = Vec::with_capacity(SHAPE_CHANNELS * size * size);
    for ch in 0..SHAPE_CHANNELS {
        out.extend(coverage.iter().map(|&a| bg[ch] + a * (fg[ch] - bg[ch])));
    }
    out
}

/// `n` images of `classes` shape classes, label-balanced to within one, in a
/// seeded random order.
pub fn generate_synthetic_dataset(classes: usize, n: usize, image_size: usize, seed: u64) -> Result<Dataset> {
    if !(2..=SHAPE_NAMES.len()).contains(&classes) {
        return Err(Error::InvalidArgument(format!(
            "{classes} classes requested; the shape vocabulary supports 2..={}",
            SHAPE_NAMES.len()
        )));
    }
    if image_size < 12 {
        return Err(Error::InvalidArgument(format!(
            "image size must be at least 12, got {image_size}"
        )));
    }
    if n < classes {
        return Err(Error::InvalidArgument(format!(
            "{n} samples cannot cover {classes} classes"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeded(derive_seed(seed, &[0]));
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let labels: Vec<usize> = order.iter().map(|&k| k % classes).collect();
    let mut data = Vec::with_capacity(n * SHAPE_CHANNELS * image_size * image_size);
    for (i, &label) in labels.iter().enumerate() {
        data.extend(render(label, image_size, derive_seed(seed, &[1, i as u64])));
    }
    let images = Tensor::new(vec![n, SHAPE_CHANNELS, image_size, image_size], data)?;
    Dataset::new(images, labels, classes, Split::SourceTrain)
}
