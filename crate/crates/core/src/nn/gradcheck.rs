//! Central finite-difference verification of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

/// Finite-difference step.
pub const STEP: f64 = 1e-4;

/// Denominator floor for the relative error, so exactly-zero gradients
/// compare on an absolute scale.
const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Worst relative error between `analytic` and the central difference of
/// `loss` around `point`, over every coordinate.
pub fn check_coordinates(
    point: &[f64],
    analytic: &[f64],
    mut loss: impl FnMut(&[f64]) -> f64,
) -> f64 {
    assert_eq!(point.len(), analytic.len());
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + STEP;
        let up = loss(&x);
        x[i] = orig - STEP;
        let down = loss(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

/// Layer operations covered by [`gradcheck`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradcheckTarget {
    Conv2d,
    MaxPool,
    DilatedConv1d,
    Dense,
    Elu,
    Sigmoid,
    Dropout,
    Bce,
    /// conv2d → ELU → max-pool composition.
    Conv2dEluPool,
}

impl GradcheckTarget {
    pub const ALL: [GradcheckTarget; 9] = [
        GradcheckTarget::Conv2d,
        GradcheckTarget::MaxPool,
        GradcheckTarget::DilatedConv1d,
        GradcheckTarget::Dense,
        GradcheckTarget::Elu,
        GradcheckTarget::Sigmoid,
        GradcheckTarget::Dropout,
        GradcheckTarget::Bce,
        GradcheckTarget::Conv2dEluPool,
    ];
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Smallest gap between the largest and second-largest value over the
/// pooling groups; trial points closer than this to a tie are resampled.
fn pool_margin(x: &Tensor) -> f64 {
    let (t, f, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut worst = f64::INFINITY;
    for ti in 0..t {
        for g in 0..f / 3 {
            for ch in 0..c {
                let mut v: Vec<f64> = (0..3).map(|k| x.data()[(ti * f + 3 * g + k) * c + ch]).collect();
                v.sort_by(|a, b| b.total_cmp(a));
                worst = worst.min(v[0] - v[1]);
            }
        }
    }
    worst
}

fn near_elu_kink(x: &Tensor) -> bool {
    x.data().iter().any(|v| v.abs() < 10.0 * STEP)
}

/// Draws a random trial for `target` (shapes and values from `seed`) and
/// returns the worst relative error over parameter and input gradients.
pub fn gradcheck(target: GradcheckTarget, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        if let Some(err) = trial(target, &mut rng) {
            return err;
        }
    }
}

/// One trial; `None` if the sampled point sits too close to a kink.
fn trial(target: GradcheckTarget, rng: &mut ChaCha8Rng) -> Option<f64> {
    use GradcheckTarget::*;
    match target {
        Conv2d => {
            let t = rng.gen_range(3..8);
            let f = rng.gen_range(3..9);
            let ci = rng.gen_range(1..4);
            let co = rng.gen_range(1..5);
            let (kt, kf) = (rng.gen_range(1..4), rng.gen_range(1..4));
            let x = random(&[t, f, ci], rng, 1.0);
            let w = random(&[kt, kf, ci, co], rng, 1.0);
            let b = random(&[co], rng, 1.0);
            let r = random(&[t - kt + 1, f - kf + 1, co], rng, 1.0);
            let g = conv2d_valid_backward(&x, &w, &r, true).unwrap();
            let mut worst = 0.0f64;
            let loss = |x: &Tensor, w: &Tensor, b: &Tensor| dot(&conv2d_valid(x, w, b).unwrap(), &r);
            worst = worst.max(check_tensor(&x, g.input_grad.as_ref().unwrap(), |x| loss(x, &w, &b)));
            worst = worst.max(check_tensor(&w, &g.param_grads[0], |w| loss(&x, w, &b)));
            worst = worst.max(check_tensor(&b, &g.param_grads[1], |b| loss(&x, &w, b)));
            Some(worst)
        }
        MaxPool => {
            let t = rng.gen_range(1..5);
            let f = rng.gen_range(3..11);
            let c = rng.gen_range(1..4);
            let x = random(&[t, f, c], rng, 1.0);
            if pool_margin(&x) < 10.0 * STEP {
                return None;
            }
            let r = random(&[t, f / 3, c], rng, 1.0);
            let dx = maxpool_freq3_backward(&x, &r).unwrap();
            Some(check_tensor(&x, &dx, |x| dot(&maxpool_freq3(x).unwrap(), &r)))
        }
        DilatedConv1d | Dense => {
            let t = rng.gen_range(4..40);
            let ci = rng.gen_range(1..5);
            let co = rng.gen_range(1..5);
            let x = random(&[t, ci], rng, 1.0);
            let b = random(&[co], rng, 1.0);
            let r = random(&[t, co], rng, 1.0);
            let mut worst = 0.0f64;
            if target == Dense {
                let w = random(&[ci, co], rng, 1.0);
                let g = dense_backward(&x, &w, &r, true).unwrap();
                let loss = |x: &Tensor, w: &Tensor, b: &Tensor| dot(&dense(x, w, b).unwrap(), &r);
                worst = worst.max(check_tensor(&x, g.input_grad.as_ref().unwrap(), |x| loss(x, &w, &b)));
                worst = worst.max(check_tensor(&w, &g.param_grads[0], |w| loss(&x, w, &b)));
                worst = worst.max(check_tensor(&b, &g.param_grads[1], |b| loss(&x, &w, b)));
            } else {
                let k = [1, 3, 5][rng.gen_range(0..3)];
                let dil = rng.gen_range(1..6);
                let w = random(&[k, ci, co], rng, 1.0);
                let g = dilated_conv1d_backward(&x, &w, &r, dil, true).unwrap();
                let loss = |x: &Tensor, w: &Tensor, b: &Tensor| {
                    dot(&dilated_conv1d(x, w, b, dil).unwrap(), &r)
                };
                worst = worst.max(check_tensor(&x, g.input_grad.as_ref().unwrap(), |x| loss(x, &w, &b)));
                worst = worst.max(check_tensor(&w, &g.param_grads[0], |w| loss(&x, w, &b)));
                worst = worst.max(check_tensor(&b, &g.param_grads[1], |b| loss(&x, &w, b)));
            }
            Some(worst)
        }
        Elu | Sigmoid => {
            let kind = if target == Elu {
                ActivationKind::Elu
            } else {
                ActivationKind::Sigmoid
            };
            let x = random(&[rng.gen_range(1..50)], rng, 3.0);
            if kind == ActivationKind::Elu && near_elu_kink(&x) {
                return None;
            }
            let r = random(x.shape(), rng, 1.0);
            let dx = activation_backward(&x, &r, kind).unwrap();
            Some(check_tensor(&x, &dx, |x| dot(&activation(x, kind), &r)))
        }
        Dropout => {
            let x = random(&[rng.gen_range(1..50)], rng, 1.0);
            let mask = dropout_mask(x.len(), 0.3, rng, true).unwrap();
            let r = random(x.shape(), rng, 1.0);
            let dx = apply_mask(&r, mask.as_deref());
            Some(check_tensor(&x, &dx, |x| dot(&apply_mask(x, mask.as_deref()), &r)))
        }
        Bce => {
            let n = rng.gen_range(1..40);
            let p = Tensor::from_fn(&[n], |_| rng.gen_range(0.05..0.95));
            let y = Tensor::from_fn(&[n], |_| rng.gen_range(0.0..1.0));
            let dp = bce_grad(&p, &y).unwrap();
            Some(check_tensor(&p, &dp, |p| bce_loss(p, &y).unwrap()))
        }
        Conv2dEluPool => {
            let t = rng.gen_range(3..7);
            let f = rng.gen_range(5..12);
            let ci = rng.gen_range(1..3);
            let co = rng.gen_range(1..4);
            let x = random(&[t, f, ci], rng, 1.0);
            let w = random(&[3, 3, ci, co], rng, 1.0);
            let b = random(&[co], rng, 0.5);
            let z = conv2d_valid(&x, &w, &b).unwrap();
            let a = activation(&z, ActivationKind::Elu);
            if near_elu_kink(&z) || pool_margin(&a) < 10.0 * STEP {
                return None;
            }
            let r = random(&[t - 2, (f - 2) / 3, co], rng, 1.0);
            let da = maxpool_freq3_backward(&a, &r).unwrap();
            let dz = activation_backward(&z, &da, ActivationKind::Elu).unwrap();
            let g = conv2d_valid_backward(&x, &w, &dz, true).unwrap();
            let loss = |x: &Tensor, w: &Tensor, b: &Tensor| {
                let z = conv2d_valid(x, w, b).unwrap();
                dot(&maxpool_freq3(&activation(&z, ActivationKind::Elu)).unwrap(), &r)
            };
            let mut worst = 0.0f64;
            worst = worst.max(check_tensor(&x, g.input_grad.as_ref().unwrap(), |x| loss(x, &w, &b)));
            worst = worst.max(check_tensor(&w, &g.param_grads[0], |w| loss(&x, w, &b)));
            worst = worst.max(check_tensor(&b, &g.param_grads[1], |b| loss(&x, &w, b)));
            Some(worst)
        }
    }
}

fn check_tensor(point: &Tensor, analytic: &Tensor, loss: impl Fn(&Tensor) -> f64) -> f64 {
    let shape = point.shape().to_vec();
    check_coordinates(point.data(), analytic.data(), |v| {
        loss(&Tensor::new(shape.clone(), v.to_vec()).unwrap())
    })
}
