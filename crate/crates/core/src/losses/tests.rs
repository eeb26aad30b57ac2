use proptest::prelude::*;

use super::*;
use crate::autodiff::{gradient_check_many, DEFAULT_STEP};
use crate::rng::{seeded, uniform_vec};

fn rand_matrix(seed: u64, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], uniform_vec(&mut seeded(seed), rows * cols, -1.0, 1.0)).unwrap()
}

fn set(role: EmbeddingRole, m: Tensor) -> EmbeddingSet {
    EmbeddingSet::new(role, m).unwrap()
}

fn tau(t: f64) -> Temperature {
    Temperature::new(t).unwrap()
}

/// Direct transcription of the anchored objective: no shifts, no masks.
fn naive_anchored(anchors: &Tensor, positives: &Tensor, tau: f64) -> f64 {
    let b = anchors.shape()[0];
    let sim = |u: &[f64], v: &[f64]| {
        let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
        let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        dot / (nu * nv)
    };
    let mut total = 0.0;
    for i in 0..b {
        let a = anchors.row(i);
        let num = (sim(a, positives.row(i)) / tau).exp();
        let mut den = 0.0;
        for j in 0..b {
            if j != i {
                den += (sim(a, anchors.row(j)) / tau).exp();
            }
            den += (sim(a, positives.row(j)) / tau).exp();
        }
        total -= (num / den).ln();
    }
    total
}

fn naive_cross_entropy(logits: &Tensor, labels: &[usize]) -> f64 {
    let (b, c) = logits.dims2().unwrap();
    let mut total = 0.0;
    for s in 0..b {
        let z: f64 = (0..c).map(|k| logits.row(s)[k].exp()).sum();
        for k in 0..c {
            let y = if labels[s] == k { 1.0 } else { 0.0 };
            total += y * (logits.row(s)[k].exp() / z).ln();
        }
    }
    -total / b as f64
}

#[test]
fn cosine_fixtures() {
    assert_eq!(cosine_sim(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
    assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    assert_eq!(cosine_sim(&[2.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
    assert!(matches!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm)));
}

#[test]
fn single_pair_contrastive_loss_is_zero() {
    for seed in 0..10 {
        let h = set(EmbeddingRole::Hat, rand_matrix(seed, 1, 5));
        let t = set(EmbeddingRole::Tilde, rand_matrix(seed + 50, 1, 5));
        assert_eq!(contrastive_loss(&h, &t, tau(0.01)).unwrap(), 0.0);
        let w = set(EmbeddingRole::Teacher, rand_matrix(seed + 99, 1, 5));
        assert_eq!(alignment_loss(&h, &t, &w, tau(0.5)).unwrap(), 0.0);
    }
}

#[test]
fn orthogonal_fixtures_hit_ln3_multiples() {
    let eye = Tensor::identity(6);
    let rows = |r: &[usize]| eye.select_rows(r);
    let h = set(EmbeddingRole::Hat, rows(&[0, 1]));
    let t = set(EmbeddingRole::Tilde, rows(&[2, 3]));
    let w = set(EmbeddingRole::Teacher, rows(&[4, 5]));
    let ln3 = 3f64.ln();
    assert!((contrastive_loss(&h, &t, tau(1.0)).unwrap() - 2.0 * ln3).abs() < 1e-9);
    assert!((alignment_loss(&h, &t, &w, tau(1.0)).unwrap() - 4.0 * ln3).abs() < 1e-9);
}

#[test]
fn losses_match_naive_oracle() {
    for seed in 0..20 {
        for &(b, d, t) in &[(3, 4, 0.5), (2, 3, 0.01), (4, 8, 0.1), (1, 3, 0.01)] {
            let h = rand_matrix(seed, b, d);
            let p = rand_matrix(seed + 1000, b, d);
            let w = rand_matrix(seed + 2000, b, d);
            let got = contrastive_loss(
                &set(EmbeddingRole::Hat, h.clone()),
                &set(EmbeddingRole::Tilde, p.clone()),
                tau(t),
            )
            .unwrap();
            assert!((got - naive_anchored(&h, &p, t)).abs() < 1e-9);
            let got = alignment_loss(
                &set(EmbeddingRole::Hat, h.clone()),
                &set(EmbeddingRole::Tilde, p.clone()),
                &set(EmbeddingRole::Teacher, w.clone()),
                tau(t),
            )
            .unwrap();
            let want = naive_anchored(&h, &w, t) + naive_anchored(&p, &w, t);
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }
}

#[test]
fn symmetric_anchoring_adds_reverse_term() {
    let h = rand_matrix(1, 3, 4);
    let p = rand_matrix(2, 3, 4);
    let mut tape = Tape::new();
    let (hv, pv) = (tape.constant(h.clone()), tape.constant(p.clone()));
    let l = contrastive_loss_on(&mut tape, hv, pv, tau(0.5), Anchoring::Symmetric).unwrap();
    let want = naive_anchored(&h, &p, 0.5) + naive_anchored(&p, &h, 0.5);
    assert!((tape.value(l).item() - want).abs() < 1e-9);
}

#[test]
fn cross_entropy_fixtures() {
    for c in 2..7 {
        let z = Tensor::zeros(vec![3, c]);
        let l = cross_entropy(&z, &[0, 1, c - 1]).unwrap();
        assert!((l - (c as f64).ln()).abs() < 1e-12);
    }
    let logits = rand_matrix(5, 4, 3);
    let labels = [0, 2, 1, 1];
    let got = cross_entropy(&logits, &labels).unwrap();
    assert!((got - naive_cross_entropy(&logits, &labels)).abs() < 1e-12);

    // loss falls toward zero as the true-class margin grows
    let mut prev = f64::INFINITY;
    for margin in [0.0, 1.0, 5.0, 20.0, 80.0] {
        let z = Tensor::from_rows(&[vec![margin, 0.0, 0.0]]).unwrap();
        let l = cross_entropy(&z, &[0]).unwrap();
        assert!(l < prev && l >= 0.0);
        prev = l;
    }
    assert!(prev < 1e-30);
    assert!(matches!(
        cross_entropy(&logits, &[0, 3, 1, 1]),
        Err(Error::InvalidLabel { label: 3, classes: 3 })
    ));
}

#[test]
fn loss_errors() {
    assert!(Temperature::new(0.0).is_err());
    assert!(Temperature::new(-0.1).is_err());
    assert!(matches!(
        EmbeddingSet::new(EmbeddingRole::Hat, Tensor::zeros(vec![2, 3])),
        Err(Error::ZeroNorm)
    ));
    assert!(matches!(
        EmbeddingSet::new(EmbeddingRole::Hat, Tensor::zeros(vec![0, 3])),
        Err(Error::Empty(_))
    ));
    let mut tape = Tape::new();
    let a = tape.constant(rand_matrix(1, 2, 3));
    let b = tape.constant(rand_matrix(2, 3, 3));
    assert!(contrastive_loss_on(&mut tape, a, b, tau(1.0), Anchoring::OneSided).is_err());
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..5 {
        let (h, p, w) = (rand_matrix(seed, 3, 4), rand_matrix(seed + 7, 3, 4), rand_matrix(seed + 9, 3, 4));
        let err = gradient_check_many(
            |t, v| contrastive_loss_on(t, v[0], v[1], tau(0.5), Anchoring::OneSided),
            &[h.clone(), p.clone()],
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err <= 1e-4, "contrastive {err}");
        let err = gradient_check_many(
            |t, v| alignment_loss_on(t, v[0], v[1], v[2], tau(0.5)),
            &[h.clone(), p, w],
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err <= 1e-4, "alignment {err}");
        let err = gradient_check_many(
            |t, v| cross_entropy_on(t, v[0], &[0, 3, 1]),
            &[h],
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err <= 1e-4, "cross-entropy {err}");
    }
}

fn matrix_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-1.0f64..1.0, rows * cols)
        .prop_filter("no near-zero rows", move |v| {
            v.chunks(cols).all(|r| r.iter().map(|x| x * x).sum::<f64>() > 1e-3)
        })
        .prop_map(move |v| Tensor::new(vec![rows, cols], v).unwrap())
}

proptest! {
    #[test]
    fn cosine_is_scale_invariant_and_bounded(
        u in prop::collection::vec(-5.0f64..5.0, 4),
        v in prop::collection::vec(-5.0f64..5.0, 4),
        alpha in 0.01f64..100.0,
        beta in 0.01f64..100.0,
    ) {
        prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
        let c = cosine_sim(&u, &v).unwrap();
        let us: Vec<f64> = u.iter().map(|x| x * alpha).collect();
        let vs: Vec<f64> = v.iter().map(|x| x * beta).collect();
        prop_assert!(c.abs() <= 1.0 + 1e-12);
        prop_assert!((cosine_sim(&us, &vs).unwrap() - c).abs() < 1e-12);
    }

    #[test]
    fn losses_are_permutation_and_row_scale_invariant(
        h in matrix_strategy(4, 3),
        p in matrix_strategy(4, 3),
        w in matrix_strategy(4, 3),
        perm in Just((0..4usize).collect::<Vec<_>>()).prop_shuffle(),
        scales in prop::collection::vec(0.1f64..10.0, 4),
        t in prop::sample::select(vec![0.01, 0.1, 0.5, 1.0]),
    ) {
        let mk = |role, m: &Tensor| set(role, m.clone());
        let base_c = contrastive_loss(&mk(EmbeddingRole::Hat, &h), &mk(EmbeddingRole::Tilde, &p), tau(t)).unwrap();
        let base_a = alignment_loss(&mk(EmbeddingRole::Hat, &h), &mk(EmbeddingRole::Tilde, &p), &mk(EmbeddingRole::Teacher, &w), tau(t)).unwrap();

        let (hp, pp, wp) = (h.select_rows(&perm), p.select_rows(&perm), w.select_rows(&perm));
        let perm_c = contrastive_loss(&mk(EmbeddingRole::Hat, &hp), &mk(EmbeddingRole::Tilde, &pp), tau(t)).unwrap();
        let perm_a = alignment_loss(&mk(EmbeddingRole::Hat, &hp), &mk(EmbeddingRole::Tilde, &pp), &mk(EmbeddingRole::Teacher, &wp), tau(t)).unwrap();
        let tol = 1e-9 * base_a.abs().max(1.0);
        prop_assert!((perm_c - base_c).abs() < tol);
        prop_assert!((perm_a - base_a).abs() < tol);

        let scale = |m: &Tensor| {
            let cols = m.shape()[1];
            Tensor::new(m.shape().to_vec(), m.data().iter().enumerate().map(|(i, v)| v * scales[i / cols]).collect()).unwrap()
        };
        let sc = contrastive_loss(&mk(EmbeddingRole::Hat, &scale(&h)), &mk(EmbeddingRole::Tilde, &p), tau(t)).unwrap();
        let sa = alignment_loss(&mk(EmbeddingRole::Hat, &h), &mk(EmbeddingRole::Tilde, &p), &mk(EmbeddingRole::Teacher, &scale(&w)), tau(t)).unwrap();
        prop_assert!((sc - base_c).abs() < tol);
        prop_assert!((sa - base_a).abs() < tol);
    }
}
