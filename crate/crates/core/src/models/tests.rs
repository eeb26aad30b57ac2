use super::*;
use crate::data::generate_synthetic_dataset;
use crate::rng::uniform_vec;

fn images(n: usize, seed: u64) -> Tensor {
    generate_synthetic_dataset(3, n, 12, seed).unwrap().images().clone()
}

fn small_cfg(seed: u64) -> EncoderConfig {
    EncoderConfig {
        input_shape: (3, 12, 12),
        widths: vec![4, 6],
        feature_dim: 5,
        use_batchnorm: true,
        seed,
    }
}

fn naive_affine(z: &Tensor, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (n, d) = z.dims2().unwrap();
    let (_, o) = w.dims2().unwrap();
    let mut out = vec![0.0; n * o];
    for i in 0..n {
        for j in 0..o {
            let mut acc = b.data()[j];
            for k in 0..d {
                acc += z.data()[i * d + k] * w.data()[k * o + j];
            }
            out[i * o + j] = acc;
        }
    }
    out
}

/// Weighted sum of encoder outputs, `sum(out * r)`, recorded on `tape`.
fn probe_loss(enc: &mut Encoder, x: &Tensor, r: &Tensor, mode: Mode) -> (Tape, Var, Bound) {
    let mut tape = Tape::new();
    let (out, bound) = enc.forward(&mut tape, x, mode).unwrap();
    let rv = tape.constant(r.clone());
    let prod = tape.mul(out, rv).unwrap();
    let loss = tape.sum_all(prod).unwrap();
    (tape, loss, bound)
}

#[test]
fn zero_input_and_zero_head_give_zero_embedding() {
    let mut enc = Encoder::new(small_cfg(1)).unwrap();
    enc.params_mut().get_mut("fc.weight").unwrap().data_mut().fill(0.0);
    enc.params_mut().get_mut("fc.bias").unwrap().data_mut().fill(0.0);
    let out = enc.encode(&Tensor::zeros(vec![3, 3, 12, 12]), 8).unwrap();
    assert_eq!(out.shape(), &[3, 5]);
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn eval_forward_is_deterministic_and_train_mode_differs() {
    let mut enc = Encoder::new(small_cfg(2)).unwrap();
    let x = images(6, 3);
    let a = enc.encode(&x, 6).unwrap();
    assert_eq!(a, enc.encode(&x, 6).unwrap());
    assert_eq!(a, enc.encode(&x, 4).unwrap());

    let mut tape = Tape::new();
    let (out, _) = enc.forward(&mut tape, &x, Mode::Train).unwrap();
    let train = tape.value(out).clone();
    assert!(train.data().iter().zip(a.data()).any(|(p, q)| (p - q).abs() > 1e-6));
    // the train pass moved the running statistics
    assert_ne!(enc.encode(&x, 6).unwrap(), a);
}

#[test]
fn encoder_rejects_bad_inputs() {
    let mut enc = Encoder::new(small_cfg(0)).unwrap();
    let mut tape = Tape::new();
    assert!(enc.forward(&mut tape, &images(3, 0).select_rows(&[0]), Mode::Train).is_err());
    assert!(enc.forward(&mut tape, &Tensor::zeros(vec![2, 3, 16, 16]), Mode::Eval).is_err());
    assert!(enc.forward(&mut tape, &images(3, 0).select_rows(&[0]), Mode::Eval).is_ok());
    assert!(Encoder::new(EncoderConfig { feature_dim: 1, ..small_cfg(0) }).is_err());
}

#[test]
fn running_stats_follow_momentum_rule() {
    let mut enc = Encoder::new(small_cfg(4)).unwrap();
    let x = images(5, 1);
    let mut tape = Tape::new();
    enc.forward(&mut tape, &x, Mode::Train).unwrap();

    // oracle: first conv stage pre-activations computed directly
    let w = enc.params().get("conv0.weight").unwrap();
    let cout = w.shape()[1];
    let mut rows = Vec::new();
    for b in 0..5 {
        for oy in 0..6 {
            for ox in 0..6 {
                let mut acc = vec![0.0; cout];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (iy, ix) = ((2 * oy + ky) as isize - 1, (2 * ox + kx) as isize - 1);
                        if !(0..12).contains(&iy) || !(0..12).contains(&ix) {
                            continue;
                        }
                        for c in 0..3 {
                            let v = x.data()[((b * 3 + c) * 12 + iy as usize) * 12 + ix as usize];
                            let k = (ky * 3 + kx) * 3 + c;
                            for (o, a) in acc.iter_mut().enumerate() {
                                *a += v * w.data()[k * cout + o];
                            }
                        }
                    }
                }
                rows.push(acc);
            }
        }
    }
    let n = rows.len() as f64;
    let buffers = enc.buffers();
    for o in 0..cout {
        let mean = rows.iter().map(|r| r[o]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[o] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((buffers[0].1.data()[o] - 0.1 * mean).abs() < 1e-12);
        assert!((buffers[1].1.data()[o] - (0.9 + 0.1 * var)).abs() < 1e-12);
    }
}

#[test]
fn encoder_gradients_match_finite_differences() {
    for use_batchnorm in [true, false] {
        let cfg = EncoderConfig { use_batchnorm, ..small_cfg(7) };
        let x = images(4, 2);
        let r = Tensor::new(vec![4, 5], uniform_vec(&mut seeded(9), 20, -1.0, 1.0)).unwrap();
        let mut enc = Encoder::new(cfg).unwrap();
        let (mut tape, loss, bound) = probe_loss(&mut enc.clone(), &x, &r, Mode::Train);
        let grads = tape.backward(loss).unwrap();
        enc.params_mut().absorb(&grads, &bound).unwrap();

        let eval = |e: &Encoder| {
            let (tape, loss, _) = probe_loss(&mut e.clone(), &x, &r, Mode::Train);
            tape.value(loss).item()
        };
        let names: Vec<String> = enc.params().names().map(str::to_string).collect();
        for name in names {
            let len = enc.params().get(&name).unwrap().len();
            for idx in [0, len / 2, len - 1] {
                let analytic = enc.params().get(&name).unwrap().grad().unwrap()[idx];
                let h = 1e-5;
                let mut plus = enc.clone();
                plus.params_mut().get_mut(&name).unwrap().data_mut()[idx] += h;
                let mut minus = enc.clone();
                minus.params_mut().get_mut(&name).unwrap().data_mut()[idx] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let err = (analytic - numeric).abs() / numeric.abs().max(1.0);
                assert!(err < 1e-6, "{name}[{idx}] bn={use_batchnorm}: {analytic} vs {numeric}");
            }
        }
    }
}

#[test]
fn twin_encoders_share_parameter_shapes() {
    let f = Encoder::new(small_cfg(1)).unwrap();
    let g = Encoder::new(small_cfg(2)).unwrap();
    let shapes = |e: &Encoder| {
        e.params()
            .entries()
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect::<Vec<_>>()
    };
    assert_eq!(shapes(&f), shapes(&g));
    assert_ne!(f.param_hash(), g.param_hash());
}

#[test]
fn classifier_fixtures_and_oracle() {
    let z = Tensor::new(vec![3, 4], uniform_vec(&mut seeded(1), 12, -2.0, 2.0)).unwrap();
    let zero = Classifier::from_parts(Tensor::zeros(vec![4, 3]), Tensor::zeros(vec![3])).unwrap();
    assert!(zero.logits(&z).unwrap().data().iter().all(|&v| v == 0.0));
    let probs = crate::losses::softmax_rows(&zero.logits(&z).unwrap()).unwrap();
    assert!(probs.data().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-12));

    let ident = Classifier::from_parts(Tensor::identity(4), Tensor::zeros(vec![4])).unwrap();
    assert_eq!(ident.logits(&z).unwrap(), z);

    let h = Classifier::new(4, 3, 5);
    let expected = naive_affine(&z, h.params().get("weight").unwrap(), h.params().get("bias").unwrap());
    let got = h.logits(&z).unwrap();
    assert_eq!(got.shape(), &[3, 3]);
    got.data().iter().zip(&expected).for_each(|(a, b)| assert!((a - b).abs() < 1e-12));
    assert!(h.logits(&Tensor::zeros(vec![2, 5])).is_err());
}

#[test]
fn projector_fixtures_and_oracle() {
    let z = Tensor::new(vec![2, 4], uniform_vec(&mut seeded(2), 8, -2.0, 2.0)).unwrap();
    let ident = Projector::from_parts(Tensor::identity(4), Tensor::zeros(vec![4])).unwrap();
    assert_eq!(ident.apply(&z).unwrap(), z);
    let zero = Projector::from_parts(Tensor::zeros(vec![4, 4]), Tensor::zeros(vec![4])).unwrap();
    assert!(zero.apply(&z).unwrap().data().iter().all(|&v| v == 0.0));
    assert!(Projector::from_parts(Tensor::zeros(vec![4, 3]), Tensor::zeros(vec![3])).is_err());

    let p = Projector::new(4, 8);
    let expected = naive_affine(&z, p.params().get("weight").unwrap(), p.params().get("bias").unwrap());
    let got = p.apply(&z).unwrap();
    assert_eq!(got.shape(), &[2, 4]);
    got.data().iter().zip(&expected).for_each(|(a, b)| assert!((a - b).abs() < 1e-12));
}

#[test]
fn duplicate_is_independent_and_unfrozen() {
    let mut src = Encoder::new(small_cfg(3)).unwrap();
    src.set_frozen(true);
    let mut copy = src.duplicate();
    assert!(!copy.is_frozen());
    let x = images(4, 4);
    assert_eq!(src.encode(&x, 4).unwrap(), copy.encode(&x, 4).unwrap());
    let before = src.param_hash();
    copy.params_mut().get_mut("fc.bias").unwrap().data_mut()[0] += 1.0;
    assert_eq!(src.param_hash(), before);
    assert_ne!(copy.param_hash(), before);
}

#[test]
fn freezing_controls_gradient_population() {
    let x = images(4, 5);
    let r = Tensor::full(vec![4, 5], 0.5);
    let mut enc = Encoder::new(small_cfg(6)).unwrap();
    enc.set_frozen(true);
    let (mut tape, loss, bound) = probe_loss(&mut enc, &x, &r, Mode::Train);
    let grads = tape.backward(loss).unwrap();
    enc.params_mut().absorb(&grads, &bound).unwrap();
    assert!(enc.params().tensors().all(|t| t.grad().is_none()));

    enc.set_frozen(false);
    let (mut tape, loss, bound) = probe_loss(&mut enc, &x, &r, Mode::Train);
    let grads = tape.backward(loss).unwrap();
    enc.params_mut().absorb(&grads, &bound).unwrap();
    assert!(enc.params().tensors().all(|t| t.grad().is_some()));
}

#[test]
fn frozen_classifier_passes_gradient_to_projector() {
    let z = Tensor::new(vec![3, 4], uniform_vec(&mut seeded(3), 12, -1.0, 1.0)).unwrap();
    let mut proj = Projector::new(4, 1);
    let mut head = Classifier::new(4, 3, 2);
    head.set_frozen(true);
    let mut tape = Tape::new();
    let zv = tape.constant(z);
    let (p, pb) = proj.forward(&mut tape, zv).unwrap();
    let (logits, hb) = head.forward(&mut tape, p).unwrap();
    let loss = crate::losses::cross_entropy_on(&mut tape, logits, &[0, 1, 2]).unwrap();
    let grads = tape.backward(loss).unwrap();
    proj.params_mut().absorb(&grads, &pb).unwrap();
    head.params_mut().absorb(&grads, &hb).unwrap();
    assert!(proj.params().tensors().all(|t| t.grad().unwrap().iter().any(|&g| g != 0.0)));
    assert!(head.params().tensors().all(|t| t.grad().is_none()));
}

#[test]
fn checkpoint_round_trip_includes_running_stats() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ctac");
    let mut enc = Encoder::new(small_cfg(8)).unwrap();
    let mut tape = Tape::new();
    enc.forward(&mut tape, &images(4, 6), Mode::Train).unwrap();
    let head = Classifier::new(5, 3, 1);
    let mut entries = enc.state("f");
    entries.extend(head.state("h"));
    save_checkpoint(&path, &entries).unwrap();

    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, entries);
    let mut fresh = Encoder::new(small_cfg(99)).unwrap();
    fresh.load_state("f", &back).unwrap();
    assert_eq!(fresh.param_hash(), enc.param_hash());
    assert_eq!(fresh.buffers(), enc.buffers());
    let mut fresh_head = Classifier::new(5, 3, 0);
    fresh_head.load_state("h", &back).unwrap();
    assert_eq!(fresh_head.param_hash(), head.param_hash());
    assert!(fresh_head.load_state("g", &back).is_err());
    assert!(Classifier::new(5, 4, 0).load_state("h", &back).is_err());
}
