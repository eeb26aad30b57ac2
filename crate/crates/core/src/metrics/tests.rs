use proptest::prelude::*;

use super::*;
use crate::rng::{seeded, uniform_vec};
use rand::Rng;

fn features(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

/// Independent DBI reference: recomputes everything per pair with plain loops.
fn naive_dbi(x: &Tensor, labels: &[usize]) -> f64 {
    let (n, d) = x.dims2().unwrap();
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort();
    classes.dedup();
    let centroid = |c: usize| {
        let mut m = vec![0.0; d];
        let mut cnt = 0.0;
        for i in 0..n {
            if labels[i] == c {
                for j in 0..d {
                    m[j] += x.row(i)[j];
                }
                cnt += 1.0;
            }
        }
        m.iter().map(|v| v / cnt).collect::<Vec<f64>>()
    };
    let dist = |a: &[f64], b: &[f64]| {
        let mut s = 0.0;
        for j in 0..a.len() {
            s += (a[j] - b[j]).powi(2);
        }
        s.sqrt()
    };
    let spread = |c: usize| {
        let m = centroid(c);
        let mut s = 0.0;
        let mut cnt = 0.0;
        for i in 0..n {
            if labels[i] == c {
                s += dist(x.row(i), &m);
                cnt += 1.0;
            }
        }
        s / cnt
    };
    let mut total = 0.0;
    for &a in &classes {
        let mut best = f64::MIN;
        for &b in &classes {
            if a != b {
                let r = (spread(a) + spread(b)) / dist(&centroid(a), &centroid(b));
                best = best.max(r);
            }
        }
        total += best;
    }
    total / classes.len() as f64
}

#[test]
fn accuracy_fixtures() {
    assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
    assert_eq!(accuracy(&[1, 2, 0], &[0, 1, 2]).unwrap(), 0.0);
    assert_eq!(accuracy(&[0, 1, 1, 1], &[0, 1, 0, 0]).unwrap(), 0.5);
    assert!(accuracy(&[0], &[0, 1]).is_err());
    assert_eq!(
        per_class_accuracy(&[0, 1, 1, 1], &[0, 1, 0, 0], 3),
        vec![Some(1.0 / 3.0), Some(1.0), None]
    );
}

#[test]
fn dbi_fixtures() {
    let x = features(&[vec![0.0, 0.0], vec![0.0, 2.0], vec![10.0, 0.0], vec![10.0, 2.0]]);
    assert_eq!(davies_bouldin(&x, &[0, 0, 1, 1]).unwrap(), 0.2);

    let single = features(&[vec![0.0, 1.0], vec![3.0, 1.0], vec![5.0, -2.0]]);
    assert_eq!(davies_bouldin(&single, &[0, 1, 2]).unwrap(), 0.0);

    // halving spread about fixed centroids halves the index
    let half = features(&[vec![0.0, 0.5], vec![0.0, 1.5], vec![10.0, 0.5], vec![10.0, 1.5]]);
    assert!((davies_bouldin(&half, &[0, 0, 1, 1]).unwrap() - 0.1).abs() < 1e-15);

    assert!(matches!(
        davies_bouldin(&x, &[0, 0, 0, 0]),
        Err(Error::InvalidArgument(_))
    ));
    let same = features(&[vec![0.0], vec![2.0], vec![1.0]]);
    assert!(matches!(
        davies_bouldin(&same, &[0, 0, 1]),
        Err(Error::CoincidentCentroids(0, 1))
    ));
}

#[test]
fn dbi_matches_naive_reference() {
    for seed in 0..100u64 {
        let mut rng = seeded(seed);
        let n = rng.random_range(4..=100);
        let d = rng.random_range(1..=6);
        let c = rng.random_range(2..=5usize.min(n));
        let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        labels[..c].iter_mut().enumerate().for_each(|(i, l)| *l = i);
        let x = Tensor::new(vec![n, d], uniform_vec(&mut rng, n * d, -3.0, 3.0)).unwrap();
        let got = davies_bouldin(&x, &labels).unwrap();
        assert!((got - naive_dbi(&x, &labels)).abs() < 1e-9);
    }
}

#[test]
fn median_centroid_fixtures() {
    let x = features(&[vec![1.0], vec![100.0], vec![2.0], vec![7.0]]);
    let c = median_centroids(&x, &[0, 0, 0, 1], 2).unwrap();
    assert_eq!(c.rows(), &[vec![2.0], vec![7.0]]);

    let even = features(&[vec![1.0, 0.0], vec![4.0, 10.0], vec![5.0, 5.0]]);
    let c = median_centroids(&even, &[0, 0, 1], 2).unwrap();
    assert_eq!(c.rows(), &[vec![2.5, 5.0], vec![5.0, 5.0]]);

    let reordered = features(&[vec![5.0, 5.0], vec![4.0, 10.0], vec![1.0, 0.0]]);
    assert_eq!(median_centroids(&reordered, &[1, 0, 0], 2).unwrap(), c);

    assert!(matches!(
        median_centroids(&x, &[0, 0, 0, 0], 2),
        Err(Error::MissingClass(1))
    ));
}

#[test]
fn drift_fixtures() {
    let a = CentroidSet::new(vec![vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
    assert_eq!(centroid_drift(&a, &a).unwrap(), 0.0);
    let moved = CentroidSet::new(vec![vec![3.0, 0.0], vec![1.0, 4.0]]).unwrap();
    assert_eq!(centroid_drift(&a, &moved).unwrap(), 3.0);
    assert_eq!(centroid_drift(&moved, &a).unwrap(), 3.0);
    let other = CentroidSet::new(vec![vec![0.0]]).unwrap();
    assert!(centroid_drift(&a, &other).is_err());
}

fn labelled_cloud() -> impl Strategy<Value = (Tensor, Vec<usize>)> {
    (2usize..5, 0u64..1000).prop_map(|(c, seed)| {
        let mut rng = seeded(seed);
        let n = 30;
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let x = Tensor::new(vec![n, 3], uniform_vec(&mut rng, n * 3, -2.0, 2.0)).unwrap();
        (x, labels)
    })
}

fn centroid_set(seed: u64) -> CentroidSet {
    let mut rng = seeded(seed);
    CentroidSet::new((0..4).map(|_| uniform_vec(&mut rng, 3, -5.0, 5.0)).collect()).unwrap()
}

proptest! {
    #[test]
    fn dbi_is_similarity_invariant(
        (x, labels) in labelled_cloud(),
        angle in 0.0f64..std::f64::consts::TAU,
        shift in prop::collection::vec(-10.0f64..10.0, 3),
        scale in 0.1f64..10.0,
    ) {
        let base = davies_bouldin(&x, &labels).unwrap();
        let (c, s) = (angle.cos(), angle.sin());
        let moved: Vec<f64> = x
            .data()
            .chunks(3)
            .flat_map(|r| {
                let (a, b, z) = (r[0], r[1], r[2]);
                [
                    scale * (c * a - s * b) + shift[0],
                    scale * (s * a + c * b) + shift[1],
                    scale * z + shift[2],
                ]
            })
            .collect();
        let moved = Tensor::new(x.shape().to_vec(), moved).unwrap();
        let got = davies_bouldin(&moved, &labels).unwrap();
        prop_assert!((got - base).abs() < 1e-9 * base.max(1.0));
    }

    #[test]
    fn drift_obeys_triangle_inequality(a in 0u64..500, b in 500u64..1000, c in 1000u64..1500) {
        let (a, b, c) = (centroid_set(a), centroid_set(b), centroid_set(c));
        let ab = centroid_drift(&a, &b).unwrap();
        let bc = centroid_drift(&b, &c).unwrap();
        let ac = centroid_drift(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
        prop_assert_eq!(ab, centroid_drift(&b, &a).unwrap());
    }
}
