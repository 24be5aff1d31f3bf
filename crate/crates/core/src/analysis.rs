//! Weight-distribution statistics and quantization sensitivity sweeps.
//!
//! Degradation is measured on a probe batch by comparing the float model's
//! outputs with those of a partially quantized copy: mean squared logit
//! difference, mean per-token KL divergence of the output distributions
//! (float relative to quantized) and mean per-token cosine similarity of the
//! final hidden states. These are proxies for translation quality, not BLEU.

use std::fmt;

use crate::bitpack::Bits;
use crate::checkpoint::{Checkpoint, Payload};
use crate::error::{Error, Result};
use crate::model::{forward_batch, ForwardOutput, ModelSpec};
use crate::plan::{quantize_model, LayerSubset};
use crate::quant::{
    quant_error, quantize, ErrorAccumulator, ErrorReport, Granularity, LogScaleMode, Scheme,
};
use crate::report::{num, Table};
use crate::tensor::{LayerGroup, Tensor};

/// Box-plot summary with linearly interpolated (R-7) quartiles.
///
/// Whiskers sit at the 1.5·IQR fences clamped to the data range; values
/// beyond them are outliers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionStats {
    pub min: f64,
    pub max: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub n_outliers: usize,
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn stats_of(values: &[f32]) -> Result<DistributionStats> {
    if values.is_empty() {
        return Err(Error::Shape("statistics of an empty tensor".into()));
    }
    let mut v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("statistics input".into()));
    }
    v.sort_by(f64::total_cmp);
    let (min, max) = (v[0], v[v.len() - 1]);
    let q1 = quantile_sorted(&v, 0.25);
    let median = quantile_sorted(&v, 0.5);
    let q3 = quantile_sorted(&v, 0.75);
    let iqr = q3 - q1;
    let whisker_low = (q1 - 1.5 * iqr).clamp(min, max);
    let whisker_high = (q3 + 1.5 * iqr).clamp(min, max);
    let n_outliers = v
        .iter()
        .filter(|&&x| x < whisker_low || x > whisker_high)
        .count();
    Ok(DistributionStats {
        min,
        max,
        q1,
        median,
        q3,
        whisker_low,
        whisker_high,
        n_outliers,
    })
}

pub fn weight_stats(t: &Tensor) -> Result<DistributionStats> {
    stats_of(t.data())
}

/// Fisher-Pearson coefficient `g1 = m3 / m2^{3/2}` over all values.
pub fn skewness_of(values: &[f32]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::Shape("skewness needs at least two values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().map(|&x| x as f64).sum::<f64>() / n;
    let (mut m2, mut m3) = (0.0, 0.0);
    for &x in values {
        let d = x as f64 - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    if m2 == 0.0 {
        return Err(Error::Shape("skewness of a constant tensor".into()));
    }
    Ok(m3 / m2.powf(1.5))
}

pub fn skewness(t: &Tensor) -> Result<f64> {
    skewness_of(t.data())
}

/// Per-channel and per-tensor reconstruction error of the same matrix.
pub fn granularity_comparison(
    a: &Tensor,
    bits: Bits,
    scheme: Scheme,
) -> Result<(ErrorReport, ErrorReport)> {
    a.dims2()?;
    let run = |g| -> Result<ErrorReport> {
        let q = quantize(a, scheme, bits, g, LogScaleMode::default())?;
        quant_error(a, &q)
    };
    Ok((run(Granularity::PerChannel)?, run(Granularity::PerTensor)?))
}

/// One statistics row: a tensor, or a whole group.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsRow {
    pub label: String,
    pub group: LayerGroup,
    pub count: usize,
    pub stats: DistributionStats,
    /// Skewness of the pooled values; `None` for constant data.
    pub skewness: Option<f64>,
    /// Mean of the per-tensor skewness values (group rows only).
    pub mean_tensor_skewness: Option<f64>,
}

/// Statistics for every matrix (`per_tensor`) or for each group's pooled
/// matrices. Quantized tensors are analysed after dequantization.
pub fn checkpoint_stats(ckpt: &Checkpoint, per_tensor: bool) -> Result<Vec<StatsRow>> {
    let matrices = ckpt
        .entries()
        .iter()
        .filter(|e| e.payload.shape().len() == 2);
    if per_tensor {
        return matrices
            .map(|e| {
                let t = e.payload.to_tensor();
                Ok(StatsRow {
                    label: e.name.clone(),
                    group: e.group,
                    count: t.numel(),
                    stats: weight_stats(&t)?,
                    skewness: skewness(&t).ok(),
                    mean_tensor_skewness: None,
                })
            })
            .collect();
    }
    let mut rows = Vec::new();
    for group in LayerGroup::ALL {
        let mut pooled = Vec::new();
        let mut skews = Vec::new();
        for e in matrices.clone().filter(|e| e.group == group) {
            let t = e.payload.to_tensor();
            if let Ok(s) = skewness(&t) {
                skews.push(s);
            }
            pooled.extend_from_slice(t.data());
        }
        if pooled.is_empty() {
            continue;
        }
        rows.push(StatsRow {
            label: group.to_string(),
            group,
            count: pooled.len(),
            stats: stats_of(&pooled)?,
            skewness: skewness_of(&pooled).ok(),
            mean_tensor_skewness: (!skews.is_empty())
                .then(|| skews.iter().sum::<f64>() / skews.len() as f64),
        });
    }
    Ok(rows)
}

pub fn stats_table(rows: &[StatsRow]) -> Table {
    let mut t = Table::new([
        "label",
        "group",
        "count",
        "min",
        "whisker_low",
        "q1",
        "median",
        "q3",
        "whisker_high",
        "max",
        "n_outliers",
        "skewness",
        "mean_tensor_skewness",
    ]);
    let opt = |v: Option<f64>| v.map(num).unwrap_or_else(|| "-".into());
    for r in rows {
        let s = &r.stats;
        t.push([
            r.label.clone(),
            r.group.to_string(),
            r.count.to_string(),
            num(s.min),
            num(s.whisker_low),
            num(s.q1),
            num(s.median),
            num(s.q3),
            num(s.whisker_high),
            num(s.max),
            s.n_outliers.to_string(),
            opt(r.skewness),
            opt(r.mean_tensor_skewness),
        ]);
    }
    t
}

/// Output degradation of a quantized model relative to the float model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Degradation {
    pub logit_mse: f64,
    /// Mean per-token `KL(p_float || p_quant)`.
    pub kl: f64,
    /// Mean per-token cosine similarity of final hidden states (1 = none).
    pub cosine: f64,
}

impl Degradation {
    pub const NONE: Degradation = Degradation {
        logit_mse: 0.0,
        kl: 0.0,
        cosine: 1.0,
    };

    /// Whether `self` is strictly worse than `other` on every metric.
    pub fn strictly_worse_than(&self, other: &Degradation) -> bool {
        self.logit_mse > other.logit_mse && self.kl > other.kl && self.cosine < other.cosine
    }

    /// Whether `self` is at least as bad as `other` on every metric.
    pub fn at_least_as_bad_as(&self, other: &Degradation) -> bool {
        self.logit_mse >= other.logit_mse && self.kl >= other.kl && self.cosine <= other.cosine
    }
}

fn log_softmax(row: &[f32]) -> Vec<f64> {
    let max = row
        .iter()
        .map(|&v| v as f64)
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = row
        .iter()
        .map(|&v| (v as f64 - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    row.iter().map(|&v| v as f64 - lse).collect()
}

/// Compares two sets of outputs for the same probe batch.
pub fn degradation(reference: &[ForwardOutput], other: &[ForwardOutput]) -> Result<Degradation> {
    if reference.len() != other.len() {
        return Err(Error::Shape("output batches differ in length".into()));
    }
    let (mut sq, mut n_logits, mut kl, mut cos, mut tokens) = (0.0, 0usize, 0.0, 0.0, 0usize);
    for (r, o) in reference.iter().zip(other) {
        if r.logits.shape() != o.logits.shape() || r.hidden.shape() != o.hidden.shape() {
            return Err(Error::Shape("output shapes differ".into()));
        }
        let (_, v) = r.logits.dims2()?;
        let (_, d) = r.hidden.dims2()?;
        for (a, b) in r
            .logits
            .data()
            .chunks_exact(v)
            .zip(o.logits.data().chunks_exact(v))
        {
            sq += a
                .iter()
                .zip(b)
                .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                .sum::<f64>();
            n_logits += v;
            let (lp, lq) = (log_softmax(a), log_softmax(b));
            let k: f64 = lp.iter().zip(&lq).map(|(p, q)| p.exp() * (p - q)).sum();
            kl += k.max(0.0);
        }
        for (a, b) in r
            .hidden
            .data()
            .chunks_exact(d)
            .zip(o.hidden.data().chunks_exact(d))
        {
            let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
            let na: f64 = a.iter().map(|&x| x as f64 * x as f64).sum();
            let nb: f64 = b.iter().map(|&x| x as f64 * x as f64).sum();
            let c = if na == 0.0 || nb == 0.0 {
                1.0
            } else {
                dot / (na * nb).sqrt()
            };
            cos += c.clamp(-1.0, 1.0);
            tokens += 1;
        }
    }
    if tokens == 0 {
        return Ok(Degradation::NONE);
    }
    Ok(Degradation {
        logit_mse: sq / n_logits as f64,
        kl: kl / tokens as f64,
        cosine: cos / tokens as f64,
    })
}

/// The tensors a sensitivity row quantized: the matrices of `group` in the
/// blocks selected by `layers`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Target {
    pub group: LayerGroup,
    pub layers: LayerSubset,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.layers {
            LayerSubset::All => write!(f, "{}", self.group),
            l => write!(f, "{}[{l}]", self.group),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport {
    pub target: Target,
    /// Code width; 16 or more means nothing was quantized.
    pub bits: u32,
    pub scheme: Scheme,
    pub granularity: Granularity,
    pub degradation: Degradation,
    /// `None` when nothing was quantized.
    pub weight_error: Option<ErrorReport>,
    /// Set when the checkpoint holds no matrix of the target.
    pub absent: bool,
}

/// Float reference outputs for a probe batch, reused across a sweep.
#[derive(Debug)]
pub struct Harness<'a> {
    ckpt: &'a Checkpoint,
    spec: &'a ModelSpec,
    probe: &'a [Vec<u32>],
    reference: Vec<ForwardOutput>,
}

impl<'a> Harness<'a> {
    pub fn new(ckpt: &'a Checkpoint, spec: &'a ModelSpec, probe: &'a [Vec<u32>]) -> Result<Self> {
        if probe.is_empty() || probe.iter().any(Vec::is_empty) {
            return Err(Error::Shape(
                "probe batch must hold non-empty sequences".into(),
            ));
        }
        let reference = forward_batch(probe, ckpt, spec)?;
        Ok(Self {
            ckpt,
            spec,
            probe,
            reference,
        })
    }

    /// Quantizes only `group` and measures the output change.
    pub fn group(
        &self,
        group: LayerGroup,
        bits: u32,
        scheme: Scheme,
        granularity: Granularity,
    ) -> Result<SensitivityReport> {
        self.run(
            Target {
                group,
                layers: LayerSubset::All,
            },
            bits,
            scheme,
            granularity,
        )
    }

    /// Quantizes the dense FFN matrices of the blocks in `subset`
    /// (channel-wise linear).
    pub fn dense_subset(&self, subset: LayerSubset, bits: u32) -> Result<SensitivityReport> {
        let target = Target {
            group: LayerGroup::DenseFFN,
            layers: subset,
        };
        self.run(target, bits, Scheme::LinearAbsMax, Granularity::PerChannel)
    }

    /// Quantizes the matrices selected by `target`; `bits` of 16 or more
    /// leaves the model unchanged.
    pub fn run(
        &self,
        target: Target,
        bits: u32,
        scheme: Scheme,
        granularity: Granularity,
    ) -> Result<SensitivityReport> {
        let Target {
            group,
            layers: subset,
        } = target;
        let mut report = SensitivityReport {
            target,
            bits,
            scheme,
            granularity,
            degradation: Degradation::NONE,
            weight_error: None,
            absent: false,
        };
        let present = self.ckpt.entries().iter().any(|e| {
            e.group == group
                && e.payload.shape().len() == 2
                && subset.contains(crate::model::layer_of(&e.name).map(|p| p.index))
        });
        if !present {
            report.absent = true;
            return Ok(report);
        }
        if bits >= 16 {
            return Ok(report);
        }
        let b = Bits::new(bits)?;
        let quantized = quantize_model(
            self.ckpt,
            &[group],
            subset,
            b,
            scheme,
            granularity,
            LogScaleMode::default(),
        )?;
        let mut acc = ErrorAccumulator::default();
        for (orig, new) in self.ckpt.entries().iter().zip(quantized.entries()) {
            if let (false, Payload::Quantized(q)) = (orig.payload.is_quantized(), &new.payload) {
                let a = orig.payload.to_tensor();
                acc.add(a.data(), crate::quant::dequantize(q).data());
            }
        }
        report.weight_error = Some(acc.finish());
        let outputs = forward_batch(self.probe, &quantized, self.spec)?;
        report.degradation = degradation(&self.reference, &outputs)?;
        Ok(report)
    }
}

/// Quantizes only `group` at `bits` and measures the output change on
/// `probe`. The input checkpoint is not modified.
pub fn group_sensitivity(
    ckpt: &Checkpoint,
    spec: &ModelSpec,
    probe: &[Vec<u32>],
    group: LayerGroup,
    bits: u32,
    scheme: Scheme,
    granularity: Granularity,
) -> Result<SensitivityReport> {
    Harness::new(ckpt, spec, probe)?.group(group, bits, scheme, granularity)
}

/// Quantizes dense FFN matrices of the `subset` blocks (channel-wise linear).
pub fn dense_layer_subset_sensitivity(
    ckpt: &Checkpoint,
    spec: &ModelSpec,
    probe: &[Vec<u32>],
    subset: LayerSubset,
    bits: u32,
) -> Result<SensitivityReport> {
    Harness::new(ckpt, spec, probe)?.dense_subset(subset, bits)
}

/// One row per report; the header documents each column.
pub fn sensitivity_table(reports: &[SensitivityReport]) -> Table {
    let mut t = Table::new([
        "target",
        "bits",
        "scheme",
        "granularity",
        "logit_mse",
        "kl",
        "cosine",
        "weight_mse",
        "weight_max_abs_err",
        "weight_rel_frobenius",
        "note",
    ]);
    for r in reports {
        let w = r.weight_error;
        let f =
            |g: fn(&ErrorReport) -> f64| w.as_ref().map(g).map(num).unwrap_or_else(|| "-".into());
        t.push([
            r.target.to_string(),
            r.bits.to_string(),
            r.scheme.to_string(),
            r.granularity.to_string(),
            num(r.degradation.logit_mse),
            num(r.degradation.kl),
            num(r.degradation.cosine),
            f(|e| e.mse),
            f(|e| e.max_abs_err),
            f(|e| e.relative_frobenius_err),
            if r.absent { "absent" } else { "proxy" }.to_string(),
        ]);
    }
    t
}
