//! Top-1 gated mixture-of-experts feed-forward layer.

use crate::checkpoint::{Checkpoint, Payload};
use crate::error::{Error, Result};
use crate::linalg::{add_bias, matmul};
use crate::tensor::Tensor;

/// Router decision for each token.
#[derive(Debug, Clone, PartialEq)]
pub struct Routing {
    pub experts: Vec<usize>,
    pub gates: Vec<f32>,
}

impl Routing {
    /// Tokens routed to each of `n_experts` experts.
    pub fn counts(&self, n_experts: usize) -> Vec<usize> {
        let mut c = vec![0; n_experts];
        for &e in &self.experts {
            c[e] += 1;
        }
        c
    }
}

/// Routes every row of `h [tokens × d]` to the argmax of `softmax(h · W_g)`.
///
/// Ties go to the lowest expert index; the gate is the chosen probability.
pub fn top1_route(h: &Tensor, router: &Payload) -> Result<Routing> {
    let logits = matmul(h, router)?;
    let (_, n) = logits.dims2()?;
    let mut experts = Vec::with_capacity(logits.shape()[0]);
    let mut gates = Vec::with_capacity(logits.shape()[0]);
    for row in logits.data().chunks_exact(n) {
        let (best, max) =
            row.iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                });
        let sum: f32 = row.iter().map(|&v| (v - max).exp()).sum();
        experts.push(best);
        gates.push(1.0 / sum);
    }
    Ok(Routing { experts, gates })
}

/// Weights of one two-layer feed-forward block.
#[derive(Debug, Clone)]
pub struct Ffn<'a> {
    pub w1: &'a Payload,
    pub b1: Vec<f32>,
    pub w2: &'a Payload,
    pub b2: Vec<f32>,
}

impl<'a> Ffn<'a> {
    /// Looks up `{prefix}.fc1.weight`, `{prefix}.fc1.bias`, `{prefix}.fc2.*`.
    pub fn from_checkpoint(ckpt: &'a Checkpoint, prefix: &str) -> Result<Self> {
        let vector =
            |name: String| -> Result<Vec<f32>> { Ok(ckpt.payload(&name)?.to_tensor().into_data()) };
        Ok(Self {
            w1: ckpt.payload(&format!("{prefix}.fc1.weight"))?,
            b1: vector(format!("{prefix}.fc1.bias"))?,
            w2: ckpt.payload(&format!("{prefix}.fc2.weight"))?,
            b2: vector(format!("{prefix}.fc2.bias"))?,
        })
    }

    fn dims(&self) -> Result<(usize, usize)> {
        let s1 = self.w1.shape();
        let s2 = self.w2.shape();
        match (&s1[..], &s2[..]) {
            ([d, f], [f2, d2])
                if f == f2 && d == d2 && self.b1.len() == *f && self.b2.len() == *d =>
            {
                Ok((*d, *f))
            }
            _ => Err(Error::Shape(format!(
                "ffn weights {s1:?}/{s2:?} with biases {}/{}",
                self.b1.len(),
                self.b2.len()
            ))),
        }
    }

    /// `ReLU(x·W1 + b1)·W2 + b2`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = matmul(x, self.w1)?;
        add_bias(&mut h, &self.b1)?;
        for v in h.data_mut() {
            *v = v.max(0.0);
        }
        let mut y = matmul(&h, self.w2)?;
        add_bias(&mut y, &self.b2)?;
        Ok(y)
    }
}

/// Experts of one MoE layer.
#[derive(Debug, Clone)]
pub struct ExpertBank<'a> {
    experts: Vec<Ffn<'a>>,
}

impl<'a> ExpertBank<'a> {
    /// All experts must share shapes, and either every weight matrix is
    /// quantized or none is.
    pub fn new(experts: Vec<Ffn<'a>>) -> Result<Self> {
        let first = experts
            .first()
            .ok_or_else(|| Error::Shape("expert bank must hold at least one expert".into()))?;
        let dims = first.dims()?;
        let quantized = first.w1.is_quantized();
        for (e, ffn) in experts.iter().enumerate() {
            if ffn.dims()? != dims {
                return Err(Error::Shape(format!(
                    "expert {e} differs in shape from expert 0"
                )));
            }
            if ffn.w1.is_quantized() != quantized || ffn.w2.is_quantized() != quantized {
                return Err(Error::MixedPrecisionBank(format!(
                    "expert {e} mixes quantized and float weights with the rest of the bank"
                )));
            }
        }
        Ok(Self { experts })
    }

    pub fn from_checkpoint(ckpt: &'a Checkpoint, block: &str, n_experts: usize) -> Result<Self> {
        let experts = (0..n_experts)
            .map(|e| Ffn::from_checkpoint(ckpt, &super::layout::expert_prefix(block, e)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(experts)
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn expert(&self, e: usize) -> &Ffn<'a> {
        &self.experts[e]
    }
}

/// `y_t = gate_t · FFN_{e_t}(h_t)` for every token `t`; returns the output
/// and the routing used.
///
/// Tokens are batched per expert. Rows of a matrix product do not interact,
/// so the result does not depend on how tokens are grouped, and experts that
/// receive no tokens are never decoded.
pub fn moe_ffn_forward(
    h: &Tensor,
    bank: &ExpertBank,
    router: &Payload,
) -> Result<(Tensor, Routing)> {
    let (tokens, d) = h.dims2()?;
    let routing = top1_route(h, router)?;
    if router.shape()[1] != bank.len() {
        return Err(Error::Shape(format!(
            "router has {} outputs for {} experts",
            router.shape()[1],
            bank.len()
        )));
    }
    let mut out = vec![0f32; tokens * d];
    for e in 0..bank.len() {
        let rows: Vec<usize> = (0..tokens).filter(|&t| routing.experts[t] == e).collect();
        if rows.is_empty() {
            continue;
        }
        let picked: Vec<&[f32]> = rows.iter().map(|&t| h.row(t)).collect();
        let y = bank.expert(e).forward(&Tensor::from_rows(&picked)?)?;
        for (&t, y_row) in rows.iter().zip(y.data().chunks_exact(d)) {
            let g = routing.gates[t];
            for (o, &v) in out[t * d..(t + 1) * d].iter_mut().zip(y_row) {
                *o = g * v;
            }
        }
    }
    Ok((Tensor::new(vec![tokens, d], out)?, routing))
}
