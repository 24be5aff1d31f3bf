//! Dequantize-on-read matrix products and end-to-end throughput reports.
//!
//! Timings are wall-clock and depend on the machine; byte counts and FLOP
//! counts are exact.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::bitpack::Bits;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::linalg::matmul_quantized;
use crate::model::{forward_batch, ModelSpec};
use crate::plan::{apply_plan, QuantPlan};
use crate::quant::QuantizedTensor;
use crate::report::{num, Table};
use crate::sizing::size_report_for;
use crate::tensor::Tensor;

/// `x [m×k] · dequantize(qt) [k×n]` without materializing the dequantized
/// matrix: weights are decoded a tile of rows at a time into a scratch
/// buffer. Both schemes are supported.
pub fn matmul_dequant_fused(qt: &QuantizedTensor, x: &Tensor) -> Result<Tensor> {
    matmul_quantized(x, qt)
}

/// Multiply-adds (counted as 2 FLOPs) per token of a forward pass over a
/// sequence of `seq_len` tokens. Under top-1 routing an MoE block costs one
/// expert FFN plus the router, independent of the number of experts.
pub fn flops_per_token(spec: &ModelSpec, seq_len: usize) -> u64 {
    let (d, f, t) = (spec.d_model as u64, spec.d_ffn as u64, seq_len as u64);
    // Four projections plus scores and weighted values over `t` positions.
    let attention = 2 * 4 * d * d + 2 * 2 * t * d;
    let ffn = 2 * 2 * d * f;
    let router = 2 * d * spec.n_experts as u64;
    let mut total = 0;
    for (layers, attn_blocks) in [(spec.enc_layers, 1), (spec.dec_layers, 2)] {
        for i in 0..layers {
            total += attn_blocks * attention + ffn;
            if spec.is_moe_layer(i) {
                total += router;
            }
        }
    }
    total + 2 * d * spec.vocab as u64
}

/// A named checkpoint encoding to benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub plan: QuantPlan,
}

impl Variant {
    pub fn new(label: impl Into<String>, plan: QuantPlan) -> Self {
        Self {
            label: label.into(),
            plan,
        }
    }
}

impl FromStr for Variant {
    type Err = Error;
    /// `f32`, `f16`, or `int2`/`int3`/`int4`/`int8` (expert FFNs quantized,
    /// the rest binary16).
    fn from_str(s: &str) -> Result<Self> {
        let plan = match s {
            "f32" => QuantPlan::new().with_default_bits(32)?,
            "f16" => QuantPlan::new(),
            _ => {
                let bits: u32 = s
                    .strip_prefix("int")
                    .and_then(|b| b.parse().ok())
                    .ok_or_else(|| Error::Parse(format!("unknown variant {s:?}")))?;
                QuantPlan::moqe(Bits::new(bits)?)
            }
        };
        Ok(Self::new(s, plan))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputRow {
    pub variant: String,
    /// Bytes the encoded weights occupy in memory.
    pub resident_bytes: u64,
    /// Payload bytes the size model predicts for the same plan.
    pub predicted_bytes: u64,
    /// Median over the timed repetitions.
    pub median_seconds: f64,
    pub tokens_per_second: f64,
}

impl ThroughputRow {
    pub fn resident_vs_predicted(&self) -> f64 {
        self.resident_bytes as f64 / self.predicted_bytes as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputReport {
    pub threads: usize,
    pub repetitions: usize,
    pub tokens: usize,
    pub flops_per_token: u64,
    pub rows: Vec<ThroughputRow>,
}

impl ThroughputReport {
    pub fn table(&self) -> Table {
        let mut t = Table::new([
            "variant",
            "threads",
            "resident_bytes",
            "predicted_bytes",
            "bytes_vs_first",
            "median_s",
            "tokens_per_s",
            "speed_vs_first",
        ]);
        let first = &self.rows[0];
        for r in &self.rows {
            t.push([
                r.variant.clone(),
                self.threads.to_string(),
                r.resident_bytes.to_string(),
                r.predicted_bytes.to_string(),
                num(r.resident_bytes as f64 / first.resident_bytes as f64),
                num(r.median_seconds),
                num(r.tokens_per_second),
                num(r.tokens_per_second / first.tokens_per_second),
            ]);
        }
        t
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Encodes `ckpt` under each variant and times forward passes over `probe`
/// on a pool of `threads` workers. One warm-up pass per variant is
/// discarded; the median of `repetitions` timed passes is reported.
pub fn throughput_report(
    ckpt: &Checkpoint,
    spec: &ModelSpec,
    variants: &[Variant],
    probe: &[Vec<u32>],
    repetitions: usize,
    threads: usize,
) -> Result<ThroughputReport> {
    if repetitions < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 repetitions, got {repetitions}"
        )));
    }
    if variants.is_empty() || probe.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one variant and one probe sequence".into(),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let tokens: usize = probe.iter().map(Vec::len).sum();
    let shapes: Vec<_> = ckpt
        .entries()
        .iter()
        .map(|e| (e.name.clone(), e.group, e.payload.shape()))
        .collect();
    let mut rows = Vec::new();
    for v in variants {
        let encoded = pool.install(|| apply_plan(ckpt, &v.plan))?;
        let predicted = size_report_for(&shapes, ckpt.meta(), &v.plan).payload_bytes;
        let mut times = Vec::with_capacity(repetitions);
        pool.install(|| -> Result<()> {
            forward_batch(probe, &encoded, spec)?;
            for _ in 0..repetitions {
                let t0 = Instant::now();
                forward_batch(probe, &encoded, spec)?;
                times.push(t0.elapsed().as_secs_f64());
            }
            Ok(())
        })?;
        let m = median(&mut times);
        rows.push(ThroughputRow {
            variant: v.label.clone(),
            resident_bytes: encoded.resident_bytes() as u64,
            predicted_bytes: predicted,
            median_seconds: m,
            tokens_per_second: tokens as f64 / m,
        });
    }
    Ok(ThroughputReport {
        threads: threads.max(1),
        repetitions,
        tokens,
        flops_per_token: flops_per_token(spec, tokens / probe.len()),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names() {
        assert_eq!(
            "int4".parse::<Variant>().unwrap().plan,
            QuantPlan::moqe(Bits::B4)
        );
        assert!("int5".parse::<Variant>().is_err());
        assert!("bf16".parse::<Variant>().is_err());
    }

    #[test]
    fn moe_and_dense_flops_agree() {
        let moe = ModelSpec::toy();
        let dense = moe.clone().with_experts(1);
        let (a, b) = (
            flops_per_token(&moe, 16) as f64,
            flops_per_token(&dense, 16) as f64,
        );
        assert!((a - b).abs() / b < 0.01);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
