//! Pre-LN encoder-decoder forward pass with on-the-fly weight decoding.

use rayon::prelude::*;

use crate::checkpoint::{Checkpoint, Payload};
use crate::error::{Error, Result};
use crate::linalg::{add_bias, matmul, matmul_transposed};
use crate::model::layout::{attn_names, layout, Stack};
use crate::model::moe::{moe_ffn_forward, ExpertBank, Ffn};
use crate::model::spec::ModelSpec;
use crate::tensor::Tensor;

const LN_EPS: f32 = 1e-5;

/// Token counts per expert for one MoE block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockRouting {
    pub block: String,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `[tokens × vocab]`.
    pub logits: Tensor,
    /// Final normalized hidden states, `[tokens × d_model]`.
    pub hidden: Tensor,
    pub routing: Vec<BlockRouting>,
}

/// Checks that every tensor `spec` needs is present with the right shape.
pub fn check_checkpoint(ckpt: &Checkpoint, spec: &ModelSpec) -> Result<()> {
    spec.validate()?;
    for t in layout(spec) {
        let p = ckpt.payload(&t.name)?;
        if p.shape() != t.shape {
            return Err(Error::Shape(format!(
                "{}: expected {:?}, found {:?}",
                t.name,
                t.shape,
                p.shape()
            )));
        }
    }
    Ok(())
}

/// Runs one sequence. The decoder, when present, consumes the same token
/// sequence as the encoder (teacher-forced) under a causal mask; logits come
/// from the last stack through the tied embedding.
pub fn model_forward(tokens: &[u32], ckpt: &Checkpoint, spec: &ModelSpec) -> Result<ForwardOutput> {
    check_checkpoint(ckpt, spec)?;
    forward_checked(tokens, ckpt, spec)
}

/// Runs several sequences in parallel; each result equals
/// [`model_forward`] on that sequence alone.
pub fn forward_batch(
    seqs: &[Vec<u32>],
    ckpt: &Checkpoint,
    spec: &ModelSpec,
) -> Result<Vec<ForwardOutput>> {
    check_checkpoint(ckpt, spec)?;
    seqs.par_iter()
        .map(|s| forward_checked(s, ckpt, spec))
        .collect()
}

fn forward_checked(tokens: &[u32], ckpt: &Checkpoint, spec: &ModelSpec) -> Result<ForwardOutput> {
    if tokens.is_empty() {
        return Err(Error::Shape("empty token sequence".into()));
    }
    let embed = ckpt.payload("embed.weight")?;
    let x = embed_tokens(tokens, embed, spec)?;
    let mut routing = Vec::new();

    let mut enc = x.clone();
    for i in 0..spec.enc_layers {
        enc = block(&enc, None, ckpt, spec, Stack::Encoder, i, &mut routing)?;
    }
    let mut hidden = if spec.enc_layers > 0 {
        layer_norm(&enc, ckpt, "enc.final_ln")?
    } else {
        enc
    };
    if spec.dec_layers > 0 {
        let memory = hidden;
        let mut dec = x;
        for i in 0..spec.dec_layers {
            dec = block(
                &dec,
                Some(&memory),
                ckpt,
                spec,
                Stack::Decoder,
                i,
                &mut routing,
            )?;
        }
        hidden = layer_norm(&dec, ckpt, "dec.final_ln")?;
    }
    let logits = matmul_transposed(&hidden, embed)?;
    Ok(ForwardOutput {
        logits,
        hidden,
        routing,
    })
}

/// `embed[token] · sqrt(d) + sinusoidal position`.
fn embed_tokens(tokens: &[u32], embed: &Payload, spec: &ModelSpec) -> Result<Tensor> {
    let d = spec.d_model;
    let scale = (d as f32).sqrt();
    let mut out = vec![0f32; tokens.len() * d];
    for (pos, (&tok, row)) in tokens.iter().zip(out.chunks_exact_mut(d)).enumerate() {
        if tok as usize >= spec.vocab {
            return Err(Error::TokenOutOfRange {
                id: tok,
                vocab: spec.vocab,
            });
        }
        embed.decode_rows(tok as usize, row);
        for (i, v) in row.iter_mut().enumerate() {
            let freq = (10_000f64).powf(-((i / 2 * 2) as f64) / d as f64);
            let angle = pos as f64 * freq;
            let pe = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            *v = *v * scale + pe as f32;
        }
    }
    Tensor::new(vec![tokens.len(), d], out)
}

fn vector(ckpt: &Checkpoint, name: &str) -> Result<Vec<f32>> {
    Ok(ckpt.payload(name)?.to_tensor().into_data())
}

fn layer_norm(x: &Tensor, ckpt: &Checkpoint, prefix: &str) -> Result<Tensor> {
    let gain = vector(ckpt, &format!("{prefix}.gain"))?;
    let bias = vector(ckpt, &format!("{prefix}.bias"))?;
    let (_, d) = x.dims2()?;
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(d) {
        let mean = row.iter().sum::<f32>() / d as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for ((v, g), b) in row.iter_mut().zip(&gain).zip(&bias) {
            *v = (*v - mean) * inv * g + b;
        }
    }
    Ok(out)
}

fn add(x: &mut Tensor, y: &Tensor) {
    for (a, b) in x.data_mut().iter_mut().zip(y.data()) {
        *a += b;
    }
}

fn linear(x: &Tensor, ckpt: &Checkpoint, weight: &str, bias: &str) -> Result<Tensor> {
    let mut y = matmul(x, ckpt.payload(weight)?)?;
    add_bias(&mut y, &vector(ckpt, bias)?)?;
    Ok(y)
}

/// Multi-head attention of `x` over `memory` (self-attention when `memory`
/// is `x`).
fn attention(
    x: &Tensor,
    memory: &Tensor,
    causal: bool,
    ckpt: &Checkpoint,
    prefix: &str,
    heads: usize,
) -> Result<Tensor> {
    let [(wq, bq), (wk, bk), (wv, bv), (wo, bo)] = attn_names(prefix);
    let q = linear(x, ckpt, &wq, &bq)?;
    let k = linear(memory, ckpt, &wk, &bk)?;
    let v = linear(memory, ckpt, &wv, &bv)?;
    let (tq, d) = q.dims2()?;
    let tk = k.shape()[0];
    let hd = d / heads;
    let scale = 1.0 / (hd as f32).sqrt();
    let mut ctx = vec![0f32; tq * d];
    ctx.par_chunks_mut(d).enumerate().for_each(|(i, out)| {
        let visible = if causal { i + 1 } else { tk };
        let mut scores = vec![0f32; visible];
        for h in 0..heads {
            let qi = &q.row(i)[h * hd..(h + 1) * hd];
            for (j, s) in scores.iter_mut().enumerate() {
                let kj = &k.row(j)[h * hd..(h + 1) * hd];
                *s = qi.iter().zip(kj).fold(0f32, |acc, (a, b)| acc + a * b) * scale;
            }
            let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
            }
            let sum: f32 = scores.iter().sum();
            let o = &mut out[h * hd..(h + 1) * hd];
            for (j, &p) in scores.iter().enumerate() {
                let vj = &v.row(j)[h * hd..(h + 1) * hd];
                for (acc, &vv) in o.iter_mut().zip(vj) {
                    *acc += p / sum * vv;
                }
            }
        }
    });
    linear(&Tensor::new(vec![tq, d], ctx)?, ckpt, &wo, &bo)
}

fn block(
    x: &Tensor,
    memory: Option<&Tensor>,
    ckpt: &Checkpoint,
    spec: &ModelSpec,
    stack: Stack,
    index: usize,
    routing: &mut Vec<BlockRouting>,
) -> Result<Tensor> {
    let p = format!("{}.{index}", stack.prefix());
    let causal = stack == Stack::Decoder;
    let mut x = x.clone();

    let h = layer_norm(&x, ckpt, &format!("{p}.ln1"))?;
    add(
        &mut x,
        &attention(
            &h,
            &h,
            causal,
            ckpt,
            &format!("{p}.self_attn"),
            spec.n_heads,
        )?,
    );
    let mut ffn_norm = format!("{p}.ln2");
    if let Some(mem) = memory {
        let h = layer_norm(&x, ckpt, &format!("{p}.ln2"))?;
        add(
            &mut x,
            &attention(
                &h,
                mem,
                false,
                ckpt,
                &format!("{p}.cross_attn"),
                spec.n_heads,
            )?,
        );
        ffn_norm = format!("{p}.ln3");
    }

    let h = layer_norm(&x, ckpt, &ffn_norm)?;
    let y = if spec.is_moe_layer(index) {
        let bank = ExpertBank::from_checkpoint(ckpt, &p, spec.n_experts)?;
        let router = ckpt.payload(&format!("{p}.moe.router.weight"))?;
        let (y, r) = moe_ffn_forward(&h, &bank, router)?;
        routing.push(BlockRouting {
            block: p,
            counts: r.counts(spec.n_experts),
        });
        y
    } else {
        Ffn::from_checkpoint(ckpt, &format!("{p}.ffn"))?.forward(&h)?
    };
    add(&mut x, &y);
    Ok(x)
}
