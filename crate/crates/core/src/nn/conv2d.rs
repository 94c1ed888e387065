use super::gemm::{gemm, View};
use super::{LayerGrad, Tensor};
use crate::error::{Error, Result};
use crate::exec;

const ROW_BLOCK: usize = 32;

struct Dims {
    t_in: usize,
    f_in: usize,
    c_in: usize,
    kt: usize,
    kf: usize,
    c_out: usize,
    t_out: usize,
    f_out: usize,
}

fn dims(input: &Tensor, weights: &Tensor) -> Result<Dims> {
    input.expect_rank(3, "conv2d input")?;
    weights.expect_rank(4, "conv2d weights")?;
    let (t_in, f_in, c_in) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let w = weights.shape();
    let (kt, kf, wc, c_out) = (w[0], w[1], w[2], w[3]);
    if wc != c_in {
        return Err(Error::Shape(format!(
            "conv2d: input has {c_in} channels, kernel expects {wc}"
        )));
    }
    if t_in < kt || f_in < kf {
        return Err(Error::Shape(format!(
            "conv2d: input {t_in}x{f_in} smaller than kernel {kt}x{kf}"
        )));
    }
    Ok(Dims {
        t_in,
        f_in,
        c_in,
        kt,
        kf,
        c_out,
        t_out: t_in - kt + 1,
        f_out: f_in - kf + 1,
    })
}

/// Fills `col` with the patches of output rows `rows`: one row per output
/// position `(t, f)`, one column per kernel tap `(dt, df, c)`.
fn im2col(x: &[f64], d: &Dims, rows: std::ops::Range<usize>, col: &mut Vec<f64>) {
    let k = d.kt * d.kf * d.c_in;
    let span = d.kf * d.c_in;
    col.clear();
    col.resize(rows.len() * d.f_out * k, 0.0);
    for (r, t) in rows.enumerate() {
        for f in 0..d.f_out {
            let dst = &mut col[(r * d.f_out + f) * k..(r * d.f_out + f + 1) * k];
            for dt in 0..d.kt {
                let src = ((t + dt) * d.f_in + f) * d.c_in;
                dst[dt * span..(dt + 1) * span].copy_from_slice(&x[src..src + span]);
            }
        }
    }
}

/// Valid 2-D cross-correlation over a `time × freq × channel` input with a
/// `kt × kf × in × out` kernel, plus per-channel bias.
pub fn conv2d_valid(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = dims(input, weights)?;
    if bias.len() != d.c_out {
        return Err(Error::Shape(format!(
            "conv2d: bias has {} entries, expected {}",
            bias.len(),
            d.c_out
        )));
    }
    let x = input.data();
    let k = d.kt * d.kf * d.c_in;
    let w = View::row_major(weights.data(), k, d.c_out);
    let b = bias.data();
    let row_len = d.f_out * d.c_out;
    let mut out = vec![0.0; d.t_out * row_len];
    exec::for_each_chunk_mut(&mut out, ROW_BLOCK * row_len, |block, chunk| {
        let t0 = block * ROW_BLOCK;
        let n_rows = chunk.len() / row_len;
        let mut col = Vec::new();
        im2col(x, &d, t0..t0 + n_rows, &mut col);
        for acc in chunk.chunks_mut(d.c_out) {
            acc.copy_from_slice(b);
        }
        gemm(View::row_major(&col, n_rows * d.f_out, k), w, 1.0, chunk);
    });
    Tensor::new(vec![d.t_out, d.f_out, d.c_out], out)
}

/// Gradients of [`conv2d_valid`] given the gradient of its output.
pub fn conv2d_valid_backward(
    input: &Tensor,
    weights: &Tensor,
    out_grad: &Tensor,
    need_input_grad: bool,
) -> Result<LayerGrad> {
    let d = dims(input, weights)?;
    if out_grad.shape() != [d.t_out, d.f_out, d.c_out] {
        return Err(Error::Shape(format!(
            "conv2d backward: output gradient shape {:?}",
            out_grad.shape()
        )));
    }
    let x = input.data();
    let g = out_grad.data();
    let k = d.kt * d.kf * d.c_in;
    let w = View::row_major(weights.data(), k, d.c_out);
    let g_row = d.f_out * d.c_out;

    let (dw, db) = exec::blocked_reduce(
        d.t_out,
        ROW_BLOCK,
        |rows| {
            let mut col = Vec::new();
            im2col(x, &d, rows.clone(), &mut col);
            let m = rows.len() * d.f_out;
            let gb = &g[rows.start * g_row..rows.end * g_row];
            let mut dw = vec![0.0; k * d.c_out];
            gemm(View::row_major(&col, m, k).t(), View::row_major(gb, m, d.c_out), 0.0, &mut dw);
            let mut db = vec![0.0; d.c_out];
            for gv in gb.chunks_exact(d.c_out) {
                db.iter_mut().zip(gv).for_each(|(a, v)| *a += v);
            }
            (dw, db)
        },
        |acc, part| {
            acc.0.iter_mut().zip(&part.0).for_each(|(a, b)| *a += b);
            acc.1.iter_mut().zip(&part.1).for_each(|(a, b)| *a += b);
        },
    )
    .expect("conv2d output has at least one row");

    let input_grad = if need_input_grad {
        let row_len = d.f_in * d.c_in;
        let span = d.kf * d.c_in;
        let mut dx = vec![0.0; d.t_in * row_len];
        exec::for_each_chunk_mut(&mut dx, ROW_BLOCK * row_len, |block, chunk| {
            // input rows [i0, i1) receive from output rows [i0 - kt + 1, i1)
            let i0 = block * ROW_BLOCK;
            let i1 = i0 + chunk.len() / row_len;
            let o0 = i0.saturating_sub(d.kt - 1);
            let o1 = i1.min(d.t_out);
            if o0 >= o1 {
                return;
            }
            let m = (o1 - o0) * d.f_out;
            let mut dcol = vec![0.0; m * k];
            gemm(
                View::row_major(&g[o0 * g_row..o1 * g_row], m, d.c_out),
                w.t(),
                0.0,
                &mut dcol,
            );
            for t in o0..o1 {
                for dt in 0..d.kt {
                    let ti = t + dt;
                    if ti < i0 || ti >= i1 {
                        continue;
                    }
                    let row = &mut chunk[(ti - i0) * row_len..(ti - i0 + 1) * row_len];
                    for f in 0..d.f_out {
                        let src = &dcol[((t - o0) * d.f_out + f) * k + dt * span..][..span];
                        let dst = &mut row[f * d.c_in..f * d.c_in + span];
                        dst.iter_mut().zip(src).for_each(|(a, v)| *a += v);
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
            Tensor::new(vec![d.c_out], db)?,
        ],
        input_grad,
    })
}
