use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Elu,
    Sigmoid,
}

#[inline]
pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activation(input: &Tensor, kind: ActivationKind) -> Tensor {
    match kind {
        ActivationKind::Elu => input.map(elu),
        ActivationKind::Sigmoid => input.map(sigmoid),
    }
}

/// Gradient with respect to the activation's input.
pub fn activation_backward(input: &Tensor, out_grad: &Tensor, kind: ActivationKind) -> Result<Tensor> {
    if input.shape() != out_grad.shape() {
        return Err(Error::Shape(format!(
            "activation backward: {:?} vs {:?}",
            input.shape(),
            out_grad.shape()
        )));
    }
    let data = input
        .data()
        .iter()
        .zip(out_grad.data())
        .map(|(&x, &g)| {
            let slope = match kind {
                ActivationKind::Elu => {
                    if x >= 0.0 {
                        1.0
                    } else {
                        x.exp()
                    }
                }
                ActivationKind::Sigmoid => {
                    let s = sigmoid(x);
                    s * (1.0 - s)
                }
            };
            g * slope
        })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted-dropout multipliers for `len` elements: each is 0 with
/// probability `rate`, otherwise `1 / (1 - rate)`. `None` means identity
/// (inference, or a zero rate).
pub fn dropout_mask<R: Rng + ?Sized>(
    len: usize,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<Option<Vec<f64>>> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(None);
    }
    let keep = 1.0 / (1.0 - rate);
    Ok(Some(
        (0..len)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect(),
    ))
}

pub fn dropout<R: Rng + ?Sized>(input: &Tensor, rate: f64, rng: &mut R, training: bool) -> Result<Tensor> {
    let mask = dropout_mask(input.len(), rate, rng, training)?;
    Ok(apply_mask(input, mask.as_deref()))
}

pub(crate) fn apply_mask(input: &Tensor, mask: Option<&[f64]>) -> Tensor {
    match mask {
        None => input.clone(),
        Some(m) => {
            let mut out = input.clone();
            out.data_mut().iter_mut().zip(m).for_each(|(v, k)| *v *= k);
            out
        }
    }
}

const P_CLAMP: f64 = 1e-7;

fn check_pair(p: &Tensor, y: &Tensor) -> Result<()> {
    if p.shape() != y.shape() {
        return Err(Error::Shape(format!(
            "bce: activation {:?} vs target {:?}",
            p.shape(),
            y.shape()
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy with `p` clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(p: &Tensor, y: &Tensor) -> Result<f64> {
    check_pair(p, y)?;
    let n = p.len() as f64;
    let total: f64 = p
        .data()
        .iter()
        .zip(y.data())
        .map(|(&p, &y)| {
            let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / n)
}

/// d(bce)/dp; zero where the clamp is active.
pub fn bce_grad(p: &Tensor, y: &Tensor) -> Result<Tensor> {
    check_pair(p, y)?;
    let n = p.len() as f64;
    let data = p
        .data()
        .iter()
        .zip(y.data())
        .map(|(&p, &y)| {
            if !(P_CLAMP..=1.0 - P_CLAMP).contains(&p) {
                0.0
            } else {
                (-y / p + (1.0 - y) / (1.0 - p)) / n
            }
        })
        .collect();
    Tensor::new(p.shape().to_vec(), data)
}

/// Gradient of `bce(sigmoid(z), y)` with respect to the logits `z`, given
/// `p = sigmoid(z)`. Algebraically `bce_grad * p (1 - p)`, evaluated in the
/// cancellation-free form.
pub fn bce_logit_grad(p: &Tensor, y: &Tensor) -> Result<Tensor> {
    check_pair(p, y)?;
    let n = p.len() as f64;
    let data = p
        .data()
        .iter()
        .zip(y.data())
        .map(|(&p, &y)| {
            if !(P_CLAMP..=1.0 - P_CLAMP).contains(&p) {
                0.0
            } else {
                (p - y) / n
            }
        })
        .collect();
    Tensor::new(p.shape().to_vec(), data)
}
