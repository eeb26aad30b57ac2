//! Benchmarks only; see `benches/`.

use cta_core::Tensor;

/// Deterministic pseudo-random tensor, values in `[-1, 1]`.
pub fn filled(shape: &[usize], salt: u64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|i| ((i as f64 + 1.0) * 12.9898 + salt as f64 * 78.233).sin())
        .collect();
    Tensor::new(shape.to_vec(), data).expect("valid shape")
}

/// Like [`filled`], mapped into `[0, 1]` for image inputs.
pub fn image_batch(n: usize, c: usize, size: usize, salt: u64) -> Tensor {
    let t = filled(&[n, c, size, size], salt);
    let data = t.data().iter().map(|v| 0.5 * (v + 1.0)).collect();
    Tensor::new(t.shape().to_vec(), data).expect("valid shape")
}
