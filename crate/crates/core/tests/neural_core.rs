use onset_tcn::nn::gradcheck::{gradcheck, GradcheckTarget};
use onset_tcn::nn::*;
use onset_tcn::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Six nested loops, straight from the definition.
fn naive_conv2d(x: &Tensor, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (t, f, ci) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kt, kf, co) = (w.shape()[0], w.shape()[1], w.shape()[3]);
    let (to, fo) = (t - kt + 1, f - kf + 1);
    let xd = |a: usize, b: usize, c: usize| x.data()[(a * f + b) * ci + c];
    let wd = |a: usize, b: usize, c: usize, d: usize| w.data()[((a * kf + b) * ci + c) * co + d];
    let mut out = vec![0.0; to * fo * co];
    for i in 0..to {
        for j in 0..fo {
            for o in 0..co {
                let mut s = b.data()[o];
                for a in 0..kt {
                    for c in 0..kf {
                        for k in 0..ci {
                            s += xd(i + a, j + c, k) * wd(a, c, k, o);
                        }
                    }
                }
                out[(i * fo + j) * co + o] = s;
            }
        }
    }
    out
}

fn naive_conv1d(x: &Tensor, w: &Tensor, b: &Tensor, d: usize) -> Vec<f64> {
    let (t, ci) = (x.shape()[0], x.shape()[1]);
    let (k, co) = (w.shape()[0], w.shape()[2]);
    let mut out = vec![0.0; t * co];
    for i in 0..t as isize {
        for o in 0..co {
            let mut s = b.data()[o];
            for j in 0..k {
                let src = i + (j as isize - (k as isize - 1) / 2) * d as isize;
                if src < 0 || src >= t as isize {
                    continue;
                }
                for c in 0..ci {
                    s += x.data()[src as usize * ci + c] * w.data()[(j * ci + c) * co + o];
                }
            }
            out[i as usize * co + o] = s;
        }
    }
    out
}

#[test]
fn conv2d_zero_kernel_yields_bias() {
    let y = conv2d_valid(
        &Tensor::filled(&[5, 5, 1], 1.0),
        &Tensor::zeros(&[3, 3, 1, 1]),
        &Tensor::filled(&[1], 0.5),
    )
    .unwrap();
    assert_eq!(y.shape(), &[3, 3, 1]);
    assert!(y.data().iter().all(|&v| v == 0.5));
}

#[test]
fn conv2d_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[7, 9, 1], &mut rng);
    let y = conv2d_valid(&x, &Tensor::filled(&[1, 1, 1, 1], 1.0), &Tensor::zeros(&[1])).unwrap();
    assert_eq!(y, x);
}

#[test]
fn conv2d_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[6, 6, 2], &mut rng);
    let w = random(&[3, 3, 2, 4], &mut rng);
    let b = random(&[4], &mut rng);
    let y = conv2d_valid(&x, &w, &b).unwrap();
    assert_eq!(y.shape(), &[4, 4, 4]);
    assert!(max_abs_diff(y.data(), &naive_conv2d(&x, &w, &b)) < 1e-6);
}

#[test]
fn conv2d_rejects_small_input_and_channel_mismatch() {
    let w = Tensor::zeros(&[3, 3, 1, 2]);
    let b = Tensor::zeros(&[2]);
    assert!(matches!(conv2d_valid(&Tensor::zeros(&[2, 5, 1]), &w, &b), Err(Error::Shape(_))));
    assert!(matches!(conv2d_valid(&Tensor::zeros(&[5, 5, 2]), &w, &b), Err(Error::Shape(_))));
}

#[test]
fn pool_examples() {
    let x = Tensor::new(vec![1, 6, 1], vec![1.0, 5.0, 2.0, 0.0, 0.0, 7.0]).unwrap();
    assert_eq!(maxpool_freq3(&x).unwrap().data(), &[5.0, 7.0]);
    assert_eq!(maxpool_freq3(&Tensor::zeros(&[2, 81, 3])).unwrap().shape(), &[2, 27, 3]);

    let c = Tensor::filled(&[2, 6, 1], 0.3);
    let y = maxpool_freq3(&c).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.3));
    let g = maxpool_freq3_backward(&c, &Tensor::filled(y.shape(), 1.0)).unwrap();
    let expected: Vec<f64> = (0..12).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
    assert_eq!(g.data(), expected.as_slice());
    assert!(matches!(maxpool_freq3(&Tensor::zeros(&[2, 2, 1])), Err(Error::Shape(_))));
}

#[test]
fn dilated_conv_identity_and_impulse() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[20, 1], &mut rng);
    let y = dilated_conv1d(&x, &Tensor::filled(&[1, 1, 1], 1.0), &Tensor::zeros(&[1]), 3).unwrap();
    assert_eq!(y, x);

    let mut imp = Tensor::zeros(&[200, 1]);
    imp.data_mut()[100] = 1.0;
    let w = Tensor::new(vec![5, 1, 1], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    for (dilation, taps) in [(8, [116, 108, 100, 92, 84]), (16, [132, 116, 100, 84, 68])] {
        let y = dilated_conv1d(&imp, &w, &Tensor::zeros(&[1]), dilation).unwrap();
        let nonzero: Vec<usize> = (0..200).filter(|&t| y.data()[t] != 0.0).collect();
        let mut sorted = taps.to_vec();
        sorted.sort();
        assert_eq!(nonzero, sorted);
        // output at t reads input at t + (j - 2) d, so tap j lands at 100 - (j - 2) d
        for (j, &t) in taps.iter().enumerate() {
            assert_eq!(y.data()[t], w.data()[j]);
        }
    }
}

#[test]
fn dilated_conv_matches_naive_loops_and_rejects_even_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[64, 3], &mut rng);
    let w = random(&[5, 3, 2], &mut rng);
    let b = random(&[2], &mut rng);
    let y = dilated_conv1d(&x, &w, &b, 4).unwrap();
    assert!(max_abs_diff(y.data(), &naive_conv1d(&x, &w, &b, 4)) < 1e-6);
    assert!(matches!(
        dilated_conv1d(&x, &Tensor::zeros(&[4, 3, 2]), &b, 1),
        Err(Error::Config(_))
    ));
}

#[test]
fn dense_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[10, 4], &mut rng);
    let eye = Tensor::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
    assert_eq!(dense(&x, &eye, &Tensor::zeros(&[4])).unwrap(), x);

    let y = dense(
        &Tensor::filled(&[7, 16], 1.0),
        &Tensor::filled(&[16, 1], 1.0),
        &Tensor::filled(&[1], 1.0),
    )
    .unwrap();
    assert!(y.data().iter().all(|&v| v == 17.0));

    let w = random(&[4, 3], &mut rng);
    let b = random(&[3], &mut rng);
    let y = dense(&x, &w, &b).unwrap();
    let k = w.clone().reshape(vec![1, 4, 3]).unwrap();
    assert!(max_abs_diff(y.data(), &naive_conv1d(&x, &k, &b, 1)) < 1e-6);
    assert!(matches!(dense(&x, &Tensor::zeros(&[5, 3]), &b), Err(Error::Shape(_))));
}

#[test]
fn activation_values_and_gradients() {
    assert_eq!(elu(0.0), 0.0);
    assert_eq!(sigmoid(0.0), 0.5);
    // exp(-50) is below half an ulp of 1, so the asymptote is reached exactly in f64
    let e = elu(-50.0);
    assert!((-1.0..-0.9999).contains(&e), "{e}");
    assert!(elu(-10.0) > -1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for kind in [ActivationKind::Elu, ActivationKind::Sigmoid] {
        for _ in 0..200 {
            let mut x0: f64 = rng.gen_range(-4.0..4.0);
            if x0.abs() < 1e-3 {
                x0 += 0.01;
            }
            let x = Tensor::new(vec![1], vec![x0]).unwrap();
            let analytic = activation_backward(&x, &Tensor::filled(&[1], 1.0), kind).unwrap().data()[0];
            let h = 1e-5;
            let f = |v: f64| activation(&Tensor::new(vec![1], vec![v]).unwrap(), kind).data()[0];
            let numeric = (f(x0 + h) - f(x0 - h)) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
            assert!(rel < 1e-6, "{kind:?} at {x0}: {analytic} vs {numeric}");
        }
    }
}

#[test]
fn dropout_contracts() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&[50], &mut rng);
    assert_eq!(dropout(&x, 0.0, &mut rng, true).unwrap(), x);
    assert_eq!(dropout(&x, 0.0, &mut rng, false).unwrap(), x);
    assert_eq!(dropout(&x, 0.7, &mut rng, false).unwrap(), x);
    assert!(matches!(dropout(&x, 1.0, &mut rng, true), Err(Error::Config(_))));

    let ones = Tensor::filled(&[1_000_000], 1.0);
    let y = dropout(&ones, 0.1, &mut ChaCha8Rng::seed_from_u64(8), true).unwrap();
    let mean = y.data().iter().sum::<f64>() / 1e6;
    assert!((0.995..=1.005).contains(&mean), "mean {mean}");

    let a = dropout(&ones, 0.1, &mut ChaCha8Rng::seed_from_u64(9), true).unwrap();
    let b = dropout(&ones, 0.1, &mut ChaCha8Rng::seed_from_u64(9), true).unwrap();
    assert_eq!(a, b);
}

#[test]
fn bce_examples() {
    let half = Tensor::filled(&[10], 0.5);
    assert!((bce_loss(&half, &half).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    let y = Tensor::new(vec![4], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    assert!(bce_loss(&y, &y).unwrap() <= 1e-6);

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let p = Tensor::from_fn(&[100], |_| rng.gen_range(0.01..0.99));
    let t = Tensor::from_fn(&[100], |_| rng.gen_range(0.0..1.0));
    let direct = p
        .data()
        .iter()
        .zip(t.data())
        .map(|(&p, &y)| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
        .sum::<f64>()
        / 100.0;
    assert!((bce_loss(&p, &t).unwrap() - direct).abs() < 1e-9);
    assert!(matches!(bce_loss(&p, &half), Err(Error::Shape(_))));
}

#[test]
fn every_layer_passes_gradcheck() {
    for target in GradcheckTarget::ALL {
        for seed in 0..3 {
            let err = gradcheck(target, seed);
            assert!(err < 1e-4, "{target:?} seed {seed}: {err:e}");
        }
    }
    assert!(gradcheck(GradcheckTarget::Dense, 11) < 1e-7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dilated_conv_keeps_length(t in 1usize..80, dilation in 1usize..40, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[t, 2], &mut rng);
        let w = random(&[5, 2, 3], &mut rng);
        let y = dilated_conv1d(&x, &w, &Tensor::zeros(&[3]), dilation).unwrap();
        prop_assert_eq!(y.shape(), &[t, 3]);
    }

    #[test]
    fn ops_are_bitwise_repeatable(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[9, 8, 2], &mut rng);
        let w = random(&[3, 3, 2, 3], &mut rng);
        let b = random(&[3], &mut rng);
        prop_assert_eq!(conv2d_valid(&x, &w, &b).unwrap(), conv2d_valid(&x, &w, &b).unwrap());
        let g = random(&[7, 6, 3], &mut rng);
        let a1 = conv2d_valid_backward(&x, &w, &g, true).unwrap();
        let a2 = conv2d_valid_backward(&x, &w, &g, true).unwrap();
        prop_assert_eq!(a1.param_grads, a2.param_grads);
        prop_assert_eq!(a1.input_grad, a2.input_grad);
    }
}
