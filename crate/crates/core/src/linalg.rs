//! Row-tiled matrix products over any weight payload.
//!
//! `x · W` accumulates `out[i, :] += x[i, k] * W[k, :]` for `k` ascending, and
//! weights are decoded a tile of rows at a time. Every output element sees
//! the same sequence of floating-point operations whatever the payload type,
//! tile size or thread count, so float, widened-f16 and dequantized weights
//! that decode to equal values give bit-identical products.

use rayon::prelude::*;

use crate::checkpoint::Payload;
use crate::error::{Error, Result};
use crate::quant::QuantizedTensor;
use crate::tensor::Tensor;

pub const TILE_ROWS: usize = 32;

/// `x [m×k] · w [k×n]`.
pub fn matmul(x: &Tensor, w: &Payload) -> Result<Tensor> {
    let shape = w.shape();
    let [k, n] = shape[..] else {
        return Err(Error::Shape(format!("weight must be 2-D, got {shape:?}")));
    };
    match w {
        Payload::F32(t) => {
            let (m, _) = check(x, k, n)?;
            let mut out = vec![0f32; m * n];
            accumulate(x.data(), k, t.data(), 0, n, &mut out);
            Tensor::new(vec![m, n], out)
        }
        _ => matmul_tiled(x, k, n, |start, buf| w.decode_rows(start, buf)),
    }
}

/// `x · dequantize(w)`, decoding one tile of weight rows at a time.
pub fn matmul_quantized(x: &Tensor, w: &QuantizedTensor) -> Result<Tensor> {
    let [k, n] = w.shape();
    matmul_tiled(x, k, n, |start, buf| w.dequantize_rows(start, buf))
}

fn check(x: &Tensor, k: usize, n: usize) -> Result<(usize, usize)> {
    let (m, xk) = x.dims2()?;
    if xk != k {
        return Err(Error::Shape(format!("[{m}x{xk}] · [{k}x{n}]")));
    }
    Ok((m, xk))
}

fn matmul_tiled(
    x: &Tensor,
    k: usize,
    n: usize,
    decode: impl Fn(usize, &mut [f32]),
) -> Result<Tensor> {
    let (m, _) = check(x, k, n)?;
    let mut out = vec![0f32; m * n];
    let mut tile = vec![0f32; TILE_ROWS.min(k) * n];
    for k0 in (0..k).step_by(TILE_ROWS) {
        let rows = TILE_ROWS.min(k - k0);
        let buf = &mut tile[..rows * n];
        decode(k0, buf);
        accumulate(x.data(), k, buf, k0, n, &mut out);
    }
    Tensor::new(vec![m, n], out)
}

/// Adds `x[:, k0..k0+rows] · w_rows` into `out`.
fn accumulate(x: &[f32], k: usize, w_rows: &[f32], k0: usize, n: usize, out: &mut [f32]) {
    let rows = w_rows.len() / n;
    out.par_chunks_mut(n).enumerate().for_each(|(i, out_row)| {
        let x_row = &x[i * k + k0..i * k + k0 + rows];
        for (&a, w_row) in x_row.iter().zip(w_rows.chunks_exact(n)) {
            for (o, &w) in out_row.iter_mut().zip(w_row) {
                *o += a * w;
            }
        }
    });
}

/// `x [m×k] · wᵀ` for `w [n×k]`, used for tied output projections.
pub fn matmul_transposed(x: &Tensor, w: &Payload) -> Result<Tensor> {
    let (m, k) = x.dims2()?;
    let shape = w.shape();
    let [n, wk] = shape[..] else {
        return Err(Error::Shape(format!("weight must be 2-D, got {shape:?}")));
    };
    if wk != k {
        return Err(Error::Shape(format!("[{m}x{k}] · [{n}x{wk}]ᵀ")));
    }
    let mut out = vec![0f32; m * n];
    let mut tile = vec![0f32; TILE_ROWS * k];
    for n0 in (0..n).step_by(TILE_ROWS) {
        let rows = TILE_ROWS.min(n - n0);
        let buf = &mut tile[..rows * k];
        w.decode_rows(n0, buf);
        let buf = &*buf;
        out.par_chunks_mut(n).enumerate().for_each(|(i, out_row)| {
            let x_row = &x.data()[i * k..(i + 1) * k];
            for (r, w_row) in buf.chunks_exact(k).enumerate() {
                out_row[n0 + r] = x_row
                    .iter()
                    .zip(w_row)
                    .fold(0f32, |acc, (a, b)| acc + a * b);
            }
        });
    }
    Tensor::new(vec![m, n], out)
}

/// Adds a bias row to every row of `x`.
pub fn add_bias(x: &mut Tensor, bias: &[f32]) -> Result<()> {
    let (_, n) = x.dims2()?;
    if bias.len() != n {
        return Err(Error::Shape(format!(
            "bias of length {} for rows of {n}",
            bias.len()
        )));
    }
    for row in x.data_mut().chunks_mut(n) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
    Ok(())
}
