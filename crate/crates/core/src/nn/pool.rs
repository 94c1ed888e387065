use super::Tensor;
use crate::error::{Error, Result};

fn check(input: &Tensor) -> Result<(usize, usize, usize)> {
    input.expect_rank(3, "maxpool input")?;
    let s = input.shape();
    if s[1] < 3 {
        return Err(Error::Shape(format!(
            "maxpool: frequency extent {} is below the pool size 3",
            s[1]
        )));
    }
    Ok((s[0], s[1], s[2]))
}

/// Index (within its group of three) of the maximum, lowest index on ties.
fn argmax3(a: f64, b: f64, c: f64) -> usize {
    let mut best = 0;
    let mut val = a;
    if b > val {
        best = 1;
        val = b;
    }
    if c > val {
        best = 2;
    }
    best
}

/// Non-overlapping max over groups of three frequency bins. Trailing bins
/// that do not fill a group are dropped.
pub fn maxpool_freq3(input: &Tensor) -> Result<Tensor> {
    let (t, f, c) = check(input)?;
    let fo = f / 3;
    let x = input.data();
    let mut out = Vec::with_capacity(t * fo * c);
    for ti in 0..t {
        for g in 0..fo {
            for ch in 0..c {
                let at = |k: usize| x[(ti * f + 3 * g + k) * c + ch];
                let (a, b, cc) = (at(0), at(1), at(2));
                out.push([a, b, cc][argmax3(a, b, cc)]);
            }
        }
    }
    Tensor::new(vec![t, fo, c], out)
}

/// Routes each output gradient to the maximal input of its group.
pub fn maxpool_freq3_backward(input: &Tensor, out_grad: &Tensor) -> Result<Tensor> {
    let (t, f, c) = check(input)?;
    let fo = f / 3;
    if out_grad.shape() != [t, fo, c] {
        return Err(Error::Shape(format!(
            "maxpool backward: output gradient shape {:?}",
            out_grad.shape()
        )));
    }
    let x = input.data();
    let g = out_grad.data();
    let mut dx = vec![0.0; x.len()];
    for ti in 0..t {
        for gi in 0..fo {
            for ch in 0..c {
                let idx = |k: usize| (ti * f + 3 * gi + k) * c + ch;
                let k = argmax3(x[idx(0)], x[idx(1)], x[idx(2)]);
                dx[idx(k)] = g[(ti * fo + gi) * c + ch];
            }
        }
    }
    Tensor::new(input.shape().to_vec(), dx)
}
