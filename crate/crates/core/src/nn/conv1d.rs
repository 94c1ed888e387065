use super::{LayerGrad, Tensor};
use crate::error::{Error, Result};
use crate::exec;

const ROW_BLOCK: usize = 64;

struct Dims {
    t: usize,
    ci: usize,
    k: usize,
    co: usize,
}

fn dims(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Dims> {
    input.expect_rank(2, "conv1d input")?;
    weights.expect_rank(3, "conv1d weights")?;
    let (t, ci) = (input.shape()[0], input.shape()[1]);
    let (k, wci, co) = (weights.shape()[0], weights.shape()[1], weights.shape()[2]);
    if k % 2 == 0 {
        return Err(Error::Config(format!(
            "dilated conv kernel width must be odd, got {k}"
        )));
    }
    if wci != ci {
        return Err(Error::Shape(format!(
            "conv1d: input has {ci} channels, kernel expects {wci}"
        )));
    }
    if bias.len() != co {
        return Err(Error::Shape(format!(
            "conv1d: bias has {} entries, expected {co}",
            bias.len()
        )));
    }
    Ok(Dims { t, ci, k, co })
}

/// Offset in frames of kernel tap `j`.
#[inline]
fn tap_offset(j: usize, k: usize, dilation: usize) -> isize {
    (j as isize - (k as isize - 1) / 2) * dilation as isize
}

/// Centred (non-causal) dilated convolution over `time × channel` input,
/// zero padded so the output keeps the input length.
pub fn dilated_conv1d(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    dilation: usize,
) -> Result<Tensor> {
    let d = dims(input, weights, bias)?;
    if dilation == 0 {
        return Err(Error::Config("dilation must be positive".into()));
    }
    let x = input.data();
    let w = weights.data();
    let b = bias.data();
    let mut out = vec![0.0; d.t * d.co];
    exec::for_each_chunk_mut(&mut out, ROW_BLOCK * d.co, |block, chunk| {
        for (r, acc) in chunk.chunks_mut(d.co).enumerate() {
            let t = (block * ROW_BLOCK + r) as isize;
            acc.copy_from_slice(b);
            for j in 0..d.k {
                let s = t + tap_offset(j, d.k, dilation);
                if s < 0 || s >= d.t as isize {
                    continue;
                }
                let xrow = &x[s as usize * d.ci..(s as usize + 1) * d.ci];
                let wo = j * d.ci * d.co;
                for (c, &xv) in xrow.iter().enumerate() {
                    let wrow = &w[wo + c * d.co..wo + (c + 1) * d.co];
                    for (a, &wv) in acc.iter_mut().zip(wrow) {
                        *a += xv * wv;
                    }
                }
            }
        }
    });
    Tensor::new(vec![d.t, d.co], out)
}

/// Gradients of [`dilated_conv1d`] given the gradient of its output.
pub fn dilated_conv1d_backward(
    input: &Tensor,
    weights: &Tensor,
    out_grad: &Tensor,
    dilation: usize,
    need_input_grad: bool,
) -> Result<LayerGrad> {
    let co = weights.shape().get(2).copied().unwrap_or(0);
    let d = dims(input, weights, &Tensor::zeros(&[co.max(1)]))?;
    if out_grad.shape() != [d.t, d.co] {
        return Err(Error::Shape(format!(
            "conv1d backward: output gradient shape {:?}",
            out_grad.shape()
        )));
    }
    let x = input.data();
    let w = weights.data();
    let g = out_grad.data();

    let (dw, db) = exec::blocked_reduce(
        d.t,
        ROW_BLOCK,
        |rows| {
            let mut dw = vec![0.0; w.len()];
            let mut db = vec![0.0; d.co];
            for t in rows {
                let gv = &g[t * d.co..(t + 1) * d.co];
                for (a, &v) in db.iter_mut().zip(gv) {
                    *a += v;
                }
                for j in 0..d.k {
                    let s = t as isize + tap_offset(j, d.k, dilation);
                    if s < 0 || s >= d.t as isize {
                        continue;
                    }
                    let xrow = &x[s as usize * d.ci..(s as usize + 1) * d.ci];
                    let wo = j * d.ci * d.co;
                    for (c, &xv) in xrow.iter().enumerate() {
                        let drow = &mut dw[wo + c * d.co..wo + (c + 1) * d.co];
                        for (a, &gvv) in drow.iter_mut().zip(gv) {
                            *a += xv * gvv;
                        }
                    }
                }
            }
            (dw, db)
        },
        |acc, part| {
            acc.0.iter_mut().zip(&part.0).for_each(|(a, b)| *a += b);
            acc.1.iter_mut().zip(&part.1).for_each(|(a, b)| *a += b);
        },
    )
    .expect("conv1d input has at least one frame");

    let input_grad = if need_input_grad {
        let mut dx = vec![0.0; d.t * d.ci];
        exec::for_each_chunk_mut(&mut dx, ROW_BLOCK * d.ci, |block, chunk| {
            for (r, acc) in chunk.chunks_mut(d.ci).enumerate() {
                let s = (block * ROW_BLOCK + r) as isize;
                for j in 0..d.k {
                    // output frame t reads input frame s = t + offset
                    let t = s - tap_offset(j, d.k, dilation);
                    if t < 0 || t >= d.t as isize {
                        continue;
                    }
                    let gv = &g[t as usize * d.co..(t as usize + 1) * d.co];
                    let wo = j * d.ci * d.co;
                    for (c, a) in acc.iter_mut().enumerate() {
                        let wrow = &w[wo + c * d.co..wo + (c + 1) * d.co];
                        *a += wrow.iter().zip(gv).map(|(p, q)| p * q).sum::<f64>();
                    }
                }
            }
        });
        Some(Tensor::new(input.shape().to_vec(), dx)?)
    } else {
        None
    };

    Ok(LayerGrad {
        param_grads: vec![
            Tensor::new(weights.shape().to_vec(), dw)?,
            Tensor::new(vec![d.co], db)?,
        ],
        input_grad,
    })
}

fn as_kernel(weights: &Tensor) -> Result<Tensor> {
    weights.expect_rank(2, "dense weights")?;
    let s = weights.shape();
    weights.clone().reshape(vec![1, s[0], s[1]])
}

/// Per-frame affine map `time × in → time × out`.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    dilated_conv1d(input, &as_kernel(weights)?, bias, 1)
}

pub fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    out_grad: &Tensor,
    need_input_grad: bool,
) -> Result<LayerGrad> {
    let mut grad = dilated_conv1d_backward(input, &as_kernel(weights)?, out_grad, 1, need_input_grad)?;
    let dw = grad.param_grads.remove(0);
    grad.param_grads
        .insert(0, dw.reshape(weights.shape().to_vec())?);
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn width_one_unit_weight_is_identity() {
        let x = Tensor::from_fn(&[9, 1], |i| i as f64 - 3.0);
        let w = Tensor::filled(&[1, 1, 1], 1.0);
        let y = dilated_conv1d(&x, &w, &Tensor::zeros(&[1]), 7).unwrap();
        assert_eq!(y, x);
    }

    fn impulse_response(dilation: usize) -> Vec<(usize, f64)> {
        let mut x = Tensor::zeros(&[200, 1]);
        x.data_mut()[100] = 1.0;
        let w = Tensor::new(vec![5, 1, 1], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let y = dilated_conv1d(&x, &w, &Tensor::zeros(&[1]), dilation).unwrap();
        y.data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(t, &v)| (t, v))
            .collect()
    }

    #[test]
    fn impulse_response_lands_on_dilated_taps() {
        // tap j reads x[t + (j-2)*d], so the impulse at 100 reaches t = 100 - (j-2)*d
        assert_eq!(
            impulse_response(8),
            vec![(84, 5.0), (92, 4.0), (100, 3.0), (108, 2.0), (116, 1.0)]
        );
        assert_eq!(
            impulse_response(16),
            vec![(68, 5.0), (84, 4.0), (100, 3.0), (116, 2.0), (132, 1.0)]
        );
    }

    #[test]
    fn even_width_is_config_error() {
        let x = Tensor::zeros(&[8, 2]);
        let w = Tensor::zeros(&[4, 2, 2]);
        assert!(matches!(
            dilated_conv1d(&x, &w, &Tensor::zeros(&[2]), 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dense_sum_plus_bias() {
        let x = Tensor::filled(&[10, 16], 1.0);
        let w = Tensor::filled(&[16, 1], 1.0);
        let b = Tensor::filled(&[1], 1.0);
        let y = dense(&x, &w, &b).unwrap();
        assert_eq!(y.shape(), &[10, 1]);
        assert!(y.data().iter().all(|&v| v == 17.0));
        let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let x = Tensor::from_fn(&[5, 3], |i| i as f64 * 0.5);
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[3])).unwrap(), x);
        assert!(matches!(
            dense(&x, &Tensor::zeros(&[4, 1]), &Tensor::zeros(&[1])),
            Err(Error::Shape(_))
        ));
    }
}
