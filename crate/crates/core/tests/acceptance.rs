//! Acceptance criteria, one check per criterion.
//!
//! Every criterion prints a single `criterion N ... PASS|FAIL` line; the test
//! fails if any criterion fails.

use std::time::{Duration, Instant};

use moqe::analysis::{skewness, Degradation, Harness};
use moqe::bench::{matmul_dequant_fused, throughput_report, Variant};
use moqe::bitpack::{pack, packed_len, unpack, Bits, CodeArray};
use moqe::checkpoint::{decode, write_checkpoint, Checkpoint, Payload};
use moqe::linalg::matmul;
use moqe::model::{
    forward_batch, model_forward, moe_ffn_forward, random_checkpoint, synthetic_checkpoint,
    ExpertBank, Ffn, ModelSpec, MoePlacement,
};
use moqe::plan::{apply_plan, LayerSubset, QuantPlan};
use moqe::quant::{
    dequantize, log_exponent, quantize, quantize_linear, quantize_log, Granularity, LogScaleMode,
    Scheme,
};
use moqe::sizing::size_report;
use moqe::tensor::{round_to_binary16, HalfTensor, LayerGroup, Tensor};
use moqe::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let t0 = Instant::now();
    let detail = f()?;
    let elapsed = t0.elapsed();
    check(elapsed < limit, || {
        format!("took {elapsed:?}, limit {limit:?}")
    })?;
    Ok(format!("{detail} [{elapsed:.2?}]"))
}

// Criterion 1: size arithmetic on the 5.3B MoE spec.
fn size_arithmetic() -> Outcome {
    let moe = ModelSpec::moe_5p3b();
    let dense = ModelSpec::dense_5p3b();
    let fp16 = size_report(&moe, &QuantPlan::new()).map_err(|e| e.to_string())?;
    let dense_fp16 = size_report(&dense, &QuantPlan::new()).map_err(|e| e.to_string())?;

    let fraction = fp16.moe_weight_fraction;
    check(within(fraction, 0.928, 0.02), || {
        format!("expert fraction {fraction:.4}")
    })?;
    let moe_vs_dense = fp16.fp16_bytes as f64 / dense_fp16.fp16_bytes as f64;
    check(within(moe_vs_dense, 8.38, 0.5), || {
        format!("MoE/dense size {moe_vs_dense:.3}")
    })?;

    let mut parts = vec![
        format!("expert fraction {:.2}%", 100.0 * fraction),
        format!("MoE/dense {moe_vs_dense:.3}X"),
    ];
    for (bits, target) in [
        (Bits::B8, 0.54),
        (Bits::B4, 0.32),
        (Bits::B3, 0.26),
        (Bits::B2, 0.20),
    ] {
        let r = size_report(&moe, &QuantPlan::moqe(bits)).map_err(|e| e.to_string())?;
        check(within(r.ratio, target, 0.02), || {
            format!("int{} ratio {:.4} vs {target}", bits.get(), r.ratio)
        })?;
        if bits == Bits::B2 {
            let reduction = r.reduction();
            check(within(reduction, 0.796, 0.02), || {
                format!("2-bit reduction {reduction:.4}")
            })?;
            parts.push(format!("2-bit reduction {:.2}%", 100.0 * reduction));
        }
        parts.push(format!("int{} {:.4}X", bits.get(), r.ratio));
    }
    Ok(parts.join(", "))
}

// Criterion 2: quantizer properties on random matrices.
const MATRICES: usize = 1000;
const GRID: usize = 1000;

fn random_matrix(rng: &mut ChaCha8Rng) -> Tensor {
    let rows = rng.gen_range(1..=24);
    let cols = rng.gen_range(1..=6);
    let heavy = StudentT::new(3.0).unwrap();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let scale = 10f32.powf(rng.gen_range(-3.0..2.0));
    let use_heavy = rng.gen_bool(0.5);
    let data = (0..rows * cols)
        .map(|_| {
            let v: f64 = if use_heavy {
                heavy.sample(rng)
            } else {
                normal.sample(rng)
            };
            v as f32 * scale
        })
        .collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

fn groups_of(a: &Tensor, g: Granularity) -> Vec<Vec<usize>> {
    let (rows, cols) = a.dims2().unwrap();
    match g {
        Granularity::PerTensor => vec![(0..rows * cols).collect()],
        Granularity::PerChannel => (0..cols)
            .map(|j| (0..rows).map(|i| i * cols + j).collect())
            .collect(),
    }
}

/// Sum of squared errors of log quantization at scale `s`, computed from the
/// definition: nearest power of two of `|a| / s` clipped to the code range.
/// The distance to `2^-k` is unimodal in `k`, so the scan stops once it grows.
fn log_sse_oracle(values: &[f32], s: f64, powers: &[f64]) -> f64 {
    let lo = powers[powers.len() - 1];
    values
        .iter()
        .map(|&a| {
            let a = a as f64;
            let t = (a.abs() / s).clamp(lo, 1.0);
            let mut k = 0;
            while k + 1 < powers.len() && (t - powers[k + 1]).abs() < (t - powers[k]).abs() {
                k += 1;
            }
            let sign = if a < 0.0 { -1.0 } else { 1.0 };
            let e = a - sign * s * powers[k];
            e * e
        })
        .sum()
}

fn grid_min_sse(values: &[f32], bits: Bits) -> f64 {
    let m = 1i32 << (bits.get() - 1);
    let powers: Vec<f64> = (0..m).map(|k| 2f64.powi(-k)).collect();
    let max = values.iter().fold(0f64, |m, &v| m.max(v.abs() as f64));
    let mut scales: Vec<f32> = (0..=GRID)
        .map(|i| max * 2f64.powf(-2.0 + 3.0 * i as f64 / GRID as f64))
        // Stored scales are binary16, so the oracle searches binary16 scales.
        .filter_map(|s| round_to_binary16(s as f32).ok())
        .collect();
    scales.dedup();
    scales
        .iter()
        .map(|&s| log_sse_oracle(values, s as f64, &powers))
        .fold(f64::INFINITY, f64::min)
}

fn sse_of(a: &Tensor, approx: &Tensor, idx: &[usize]) -> f64 {
    idx.iter()
        .map(|&i| {
            let e = a.data()[i] as f64 - approx.data()[i] as f64;
            e * e
        })
        .sum()
}

fn quantizer_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut linear_checked, mut exponents_checked, mut midpoints, mut fits_checked) =
        (0usize, 0usize, 0usize, 0usize);
    let mut worst_fit_ratio = 0f64;
    for scheme in [Scheme::LinearAbsMax, Scheme::LogScale] {
        for bits in Bits::ALL {
            for gran in [Granularity::PerChannel, Granularity::PerTensor] {
                for _ in 0..MATRICES {
                    let a = random_matrix(&mut rng);
                    let cols = a.shape()[1];
                    let q = quantize(&a, scheme, bits, gran, LogScaleMode::MseOptimal)
                        .map_err(|e| e.to_string())?;
                    let d = dequantize(&q);
                    if scheme == Scheme::LinearAbsMax {
                        for (i, (&x, &y)) in a.data().iter().zip(d.data()).enumerate() {
                            let s = q.scale_for(i % cols) as f64;
                            let err = (x as f64 - y as f64).abs();
                            check(err <= s / 2.0, || {
                                format!("linear b={} {gran}: |{x} - {y}| > {s}/2", bits.get())
                            })?;
                            linear_checked += 1;
                        }
                        continue;
                    }
                    let m = 1i32 << (bits.get() - 1);
                    for (i, &x) in a.data().iter().enumerate() {
                        let s = q.scale_for(i % cols);
                        let k = log_exponent(x.abs(), s, bits) as i32;
                        let t = (x.abs() as f64 / s as f64).clamp(2f64.powi(1 - m), 1.0);
                        let err = |k: i32| (t - 2f64.powi(-k)).abs();
                        let best = (0..m).min_by(|&p, &r| err(p).total_cmp(&err(r))).unwrap();
                        if k != best {
                            let tie = err(k) == err(best);
                            check(tie, || {
                                format!("log b={} t={t}: exponent {k}, nearest {best}", bits.get())
                            })?;
                            midpoints += 1;
                        }
                        exponents_checked += 1;
                    }
                    let absmax = quantize_log(&a, bits, gran, LogScaleMode::AbsMax)
                        .map_err(|e| e.to_string())?;
                    let da = dequantize(&absmax);
                    for idx in groups_of(&a, gran) {
                        let values: Vec<f32> = idx.iter().map(|&i| a.data()[i]).collect();
                        if values.iter().all(|&v| v == 0.0) {
                            continue;
                        }
                        let fit = sse_of(&a, &d, &idx);
                        let abs = sse_of(&a, &da, &idx);
                        check(fit <= abs, || {
                            format!(
                                "log b={} {gran}: fitted sse {fit} > abs-max sse {abs}",
                                bits.get()
                            )
                        })?;
                        let grid = grid_min_sse(&values, bits);
                        if grid > 0.0 {
                            worst_fit_ratio = worst_fit_ratio.max(fit / grid);
                        }
                        check(fit <= grid * 1.01 + 1e-30, || {
                            format!(
                                "log b={} {gran}: fitted sse {fit} vs grid {grid}",
                                bits.get()
                            )
                        })?;
                        fits_checked += 1;
                    }
                }
            }
        }
    }
    Ok(format!(
        "{linear_checked} linear elements within s/2, {exponents_checked} log exponents ({midpoints} exact midpoints), \
         {fits_checked} fitted scales (worst fit/grid {worst_fit_ratio:.5})"
    ))
}

// Criterion 3: bit packing.
/// LSB-first bit stream of offset-binary codes, padded to the format length.
fn pack_oracle(codes: &[i8], bits: u8) -> Vec<u8> {
    let b = bits as usize;
    let len = if bits == 3 {
        3 * codes.len().div_ceil(8)
    } else {
        (codes.len() * b).div_ceil(8)
    };
    let mut out = vec![0u8; len];
    for (i, &q) in codes.iter().enumerate() {
        let u = (q as i32 + (1 << (b - 1))) as u32;
        for bit in 0..b {
            if u >> bit & 1 == 1 {
                let pos = i * b + bit;
                out[pos / 8] |= 1 << (pos % 8);
            }
        }
    }
    out
}

fn bit_packing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut arrays = 0usize;
    for bits in Bits::ALL {
        let b = bits.get() as usize;
        for count in 0..=64usize {
            let expected_len = if b == 3 {
                3 * count.div_ceil(8)
            } else {
                (count * b).div_ceil(8)
            };
            check(packed_len(bits, count) == expected_len, || {
                format!("b={b} n={count}: packed length")
            })?;
            for _ in 0..100 {
                let codes: Vec<i8> = (0..count)
                    .map(|_| rng.gen_range(bits.min_code()..=bits.max_code()) as i8)
                    .collect();
                let arr = CodeArray::new(bits, codes.clone()).map_err(|e| e.to_string())?;
                let packed = pack(&arr);
                check(packed == pack_oracle(&codes, bits.get()), || {
                    format!("b={b} n={count}: layout")
                })?;
                let back = unpack(&packed, bits, count).map_err(|e| e.to_string())?;
                check(back.codes() == &codes[..], || {
                    format!("b={b} n={count}: round trip")
                })?;
                arrays += 1;
            }
        }
        // Every code value in every slot of an 8-code group.
        for slot in 0..8 {
            for q in bits.min_code()..=bits.max_code() {
                let mut codes = vec![0i8; 8];
                codes[slot] = q as i8;
                let arr = CodeArray::new(bits, codes.clone()).map_err(|e| e.to_string())?;
                let back = unpack(&pack(&arr), bits, 8).map_err(|e| e.to_string())?;
                check(back.codes() == &codes[..], || {
                    format!("b={b} slot {slot} code {q}")
                })?;
            }
        }
    }
    Ok(format!(
        "{arrays} random arrays plus every code in every slot, b in {{2,3,4,8}}, n in 0..=64"
    ))
}

// Criterion 4: MoE forward invariants on the toy spec.
fn probe(rng: &mut ChaCha8Rng, vocab: usize, seqs: usize, len: usize) -> Vec<Vec<u32>> {
    (0..seqs)
        .map(|_| (0..len).map(|_| rng.gen_range(0..vocab as u32)).collect())
        .collect()
}

fn rel_frobenius(a: &Tensor, b: &Tensor) -> f64 {
    let num: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    let den: f64 = b.data().iter().map(|&y| (y as f64).powi(2)).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

fn moe_invariants() -> Outcome {
    let spec = ModelSpec::toy();
    let ckpt = random_checkpoint(&spec, 4).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch = probe(&mut rng, spec.vocab, 4, 12);

    // One-hot routing: every token lands on exactly one expert per MoE block.
    let outs = forward_batch(&batch, &ckpt, &spec).map_err(|e| e.to_string())?;
    let moe_blocks = (0..spec.enc_layers)
        .chain(0..spec.dec_layers)
        .filter(|&i| spec.is_moe_layer(i))
        .count();
    for (o, seq) in outs.iter().zip(&batch) {
        check(o.routing.len() == moe_blocks, || {
            "routing missing for a block".into()
        })?;
        for r in &o.routing {
            let total: usize = r.counts.iter().sum();
            check(total == seq.len(), || {
                format!("{}: {total} routed of {}", r.block, seq.len())
            })?;
        }
    }

    // Identical experts: output equals gate times the single-expert FFN.
    let h = Tensor::new(
        vec![10, spec.d_model],
        (0..10 * spec.d_model)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
    )
    .unwrap();
    let one = Ffn::from_checkpoint(&ckpt, "enc.0.moe.expert.0").map_err(|e| e.to_string())?;
    let bank = ExpertBank::new(vec![one.clone(); spec.n_experts]).map_err(|e| e.to_string())?;
    let router = ckpt.payload("enc.0.moe.router.weight").unwrap();
    let (y, routing) = moe_ffn_forward(&h, &bank, router).map_err(|e| e.to_string())?;
    let dense = one.forward(&h).map_err(|e| e.to_string())?;
    for t in 0..10 {
        let expect: Vec<f32> = dense.row(t).iter().map(|&v| routing.gates[t] * v).collect();
        check(y.row(t) == &expect[..], || {
            format!("identical experts differ at token {t}")
        })?;
    }

    // A single-expert bank is the dense FFN.
    let single = ExpertBank::new(vec![one.clone()]).map_err(|e| e.to_string())?;
    let zero_router = Payload::F32(Tensor::zeros(vec![spec.d_model, 1]));
    let (y1, r1) = moe_ffn_forward(&h, &single, &zero_router).map_err(|e| e.to_string())?;
    check(r1.gates.iter().all(|&g| g == 1.0), || {
        "single expert gate not 1".into()
    })?;
    check(y1 == dense, || {
        "single-expert MoE differs from dense FFN".into()
    })?;
    let dense_spec = spec.clone().with_experts(1);
    let dense_ckpt = random_checkpoint(&dense_spec, 5).map_err(|e| e.to_string())?;
    let no_moe = ModelSpec {
        moe_placement: MoePlacement::None,
        ..dense_spec.clone()
    };
    let a = model_forward(&batch[0], &dense_ckpt, &dense_spec).map_err(|e| e.to_string())?;
    let b = model_forward(&batch[0], &dense_ckpt, &no_moe).map_err(|e| e.to_string())?;
    check(a.logits == b.logits, || {
        "n_experts=1 differs from dense".into()
    })?;

    // Bit-identical across runs and thread counts.
    let reference = forward_batch(&batch, &ckpt, &spec).map_err(|e| e.to_string())?;
    for threads in [1, 2, 3, 8] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let again = pool
            .install(|| forward_batch(&batch, &ckpt, &spec))
            .map_err(|e| e.to_string())?;
        check(again == reference, || {
            format!("{threads} threads changed the output")
        })?;
    }
    let solo = model_forward(&batch[2], &ckpt, &spec).map_err(|e| e.to_string())?;
    check(solo == reference[2], || {
        "batched and single-sequence outputs differ".into()
    })?;

    // Fused dequantizing product against dequantize-then-multiply.
    let mut worst = 0f64;
    for bits in Bits::ALL {
        for gran in [Granularity::PerChannel, Granularity::PerTensor] {
            for scheme in [Scheme::LinearAbsMax, Scheme::LogScale] {
                let w = Tensor::new(
                    vec![64, 64],
                    (0..4096).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
                .unwrap();
                let x = Tensor::new(
                    vec![64, 64],
                    (0..4096).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
                .unwrap();
                let q = quantize(&w, scheme, bits, gran, LogScaleMode::MseOptimal)
                    .map_err(|e| e.to_string())?;
                let fused = matmul_dequant_fused(&q, &x).map_err(|e| e.to_string())?;
                let unfused =
                    matmul(&x, &Payload::F32(dequantize(&q))).map_err(|e| e.to_string())?;
                let err = rel_frobenius(&fused, &unfused);
                worst = worst.max(err);
                check(err <= 1e-5, || {
                    format!("fused b={} {gran} {scheme}: {err}", bits.get())
                })?;
            }
        }
    }

    // On-the-fly decoding matches a materialized dequantized model.
    let q = apply_plan(&ckpt, &QuantPlan::moqe(Bits::B4)).map_err(|e| e.to_string())?;
    let mut materialized = Checkpoint::new();
    for (k, v) in q.meta() {
        materialized.set_meta(k.clone(), v.clone()).unwrap();
    }
    for e in q.entries() {
        materialized
            .push(e.name.clone(), e.group, Payload::F32(e.payload.to_tensor()))
            .unwrap();
    }
    let on_the_fly = forward_batch(&batch, &q, &spec).map_err(|e| e.to_string())?;
    let dense_path = forward_batch(&batch, &materialized, &spec).map_err(|e| e.to_string())?;
    for (x, y) in on_the_fly.iter().zip(&dense_path) {
        let err = rel_frobenius(&x.logits, &y.logits);
        check(err <= 1e-6, || format!("on-the-fly vs materialized: {err}"))?;
    }
    Ok(format!("{moe_blocks} MoE blocks one-hot, 4 thread counts bit-identical, worst fused error {worst:.2e}"))
}

// Criterion 5: sensitivity ordering on the synthetic checkpoint.
fn sensitivity_ordering() -> Outcome {
    let spec = ModelSpec::toy();
    let ckpt = synthetic_checkpoint(&spec, 5).map_err(|e| e.to_string())?;
    for e in ckpt
        .entries()
        .iter()
        .filter(|e| e.payload.shape().len() == 2)
    {
        let g = skewness(&e.payload.to_tensor()).map_err(|e| e.to_string())?;
        if e.group == LayerGroup::DenseFFN && e.name.ends_with("fc2.weight") {
            check(within(g, -1.84, 0.05), || {
                format!("{} skewness {g:.3}", e.name)
            })?;
        } else if e.group == LayerGroup::ExpertFFN {
            check(g.abs() < 0.25, || format!("{} skewness {g:.3}", e.name))?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch = probe(&mut rng, spec.vocab, 4, 16);
    let harness = Harness::new(&ckpt, &spec, &batch).map_err(|e| e.to_string())?;
    let lin = Scheme::LinearAbsMax;
    let ch = Granularity::PerChannel;
    let deg = |g, b| {
        harness
            .group(g, b, lin, ch)
            .map(|r| r.degradation)
            .map_err(|e| e.to_string())
    };

    let expert2 = deg(LayerGroup::ExpertFFN, 2)?;
    let dense2 = deg(LayerGroup::DenseFFN, 2)?;
    check(dense2.strictly_worse_than(&expert2), || {
        format!("dense {dense2:?} vs expert {expert2:?}")
    })?;

    for group in [
        LayerGroup::ExpertFFN,
        LayerGroup::DenseFFN,
        LayerGroup::SelfAttention,
        LayerGroup::CrossAttention,
    ] {
        let mut prev: Option<Degradation> = None;
        for bits in [2, 3, 4, 8, 16] {
            let d = deg(group, bits)?;
            if let Some(p) = prev {
                check(p.at_least_as_bad_as(&d), || {
                    format!("{group}: {bits} bits worse than fewer bits")
                })?;
            }
            prev = Some(d);
        }
        check(prev == Some(Degradation::NONE), || {
            format!("{group}: 16 bits not lossless")
        })?;
    }

    // Quantizing all dense FFN blocks hurts at least as much as even-only,
    // on this checkpoint and on its dense counterpart.
    let dense_spec = spec.clone().with_experts(1);
    let dense_ckpt = synthetic_checkpoint(&dense_spec, 5).map_err(|e| e.to_string())?;
    let dense_harness =
        Harness::new(&dense_ckpt, &dense_spec, &batch).map_err(|e| e.to_string())?;
    let mut dense_checks = Vec::new();
    for (label, h) in [("moe", &harness), ("dense", &dense_harness)] {
        for bits in [2, 3, 4, 8] {
            let all = h
                .dense_subset(LayerSubset::All, bits)
                .map_err(|e| e.to_string())?
                .degradation;
            let even = h
                .dense_subset(LayerSubset::Even, bits)
                .map_err(|e| e.to_string())?
                .degradation;
            check(all.logit_mse >= even.logit_mse, || {
                format!("{label} b={bits}: all {all:?} < even {even:?}")
            })?;
            if bits == 2 {
                dense_checks.push(format!(
                    "{label} all/even logit mse {:.4}/{:.4}",
                    all.logit_mse, even.logit_mse
                ));
            }
        }
    }
    Ok(format!(
        "2-bit logit mse dense {:.4} > expert {:.4}, kl {:.4} > {:.4}, cosine {:.4} < {:.4}; {}",
        dense2.logit_mse,
        expert2.logit_mse,
        dense2.kl,
        expert2.kl,
        dense2.cosine,
        expert2.cosine,
        dense_checks.join(", ")
    ))
}

// Criterion 6: throughput is report-only; resident bytes must match sizing.
fn throughput_bytes() -> Outcome {
    let spec = ModelSpec::toy();
    let ckpt = random_checkpoint(&spec, 6).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let batch = probe(&mut rng, spec.vocab, 2, 16);
    let variants: Vec<Variant> = ["f32", "f16", "int8", "int4", "int3", "int2"]
        .iter()
        .map(|v| v.parse().unwrap())
        .collect();
    let report =
        throughput_report(&ckpt, &spec, &variants, &batch, 3, 2).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    for r in &report.rows {
        let dev = (r.resident_vs_predicted() - 1.0).abs();
        check(dev <= 0.05, || {
            format!(
                "{}: resident {} vs predicted {}",
                r.variant, r.resident_bytes, r.predicted_bytes
            )
        })?;
        parts.push(format!("{} {:.0} tok/s", r.variant, r.tokens_per_second));
    }
    Ok(format!(
        "resident bytes match sizing; report-only timings: {}",
        parts.join(", ")
    ))
}

// Criterion 7: container round trip and corruption errors.
fn random_payload(rng: &mut ChaCha8Rng) -> Payload {
    let rows = rng.gen_range(1..=9);
    let cols = rng.gen_range(1..=9);
    let data: Vec<f32> = (0..rows * cols)
        .map(|_| rng.gen_range(-100.0..100.0))
        .collect();
    let matrix = Tensor::new(vec![rows, cols], data.clone()).unwrap();
    match rng.gen_range(0..5) {
        0 => Payload::F32(Tensor::new(vec![rows * cols], data).unwrap()),
        1 => Payload::F32(matrix),
        2 => Payload::F16(HalfTensor::from_tensor(&matrix).unwrap()),
        3 => {
            let bits = *Bits::ALL.choose(rng).unwrap();
            let gran = if rng.gen_bool(0.5) {
                Granularity::PerChannel
            } else {
                Granularity::PerTensor
            };
            Payload::Quantized(quantize_linear(&matrix, bits, gran).unwrap())
        }
        _ => {
            let bits = *Bits::ALL.choose(rng).unwrap();
            let gran = if rng.gen_bool(0.5) {
                Granularity::PerChannel
            } else {
                Granularity::PerTensor
            };
            Payload::Quantized(quantize_log(&matrix, bits, gran, LogScaleMode::MseOptimal).unwrap())
        }
    }
}

fn random_checkpoint_mixed(rng: &mut ChaCha8Rng) -> Checkpoint {
    let mut c = Checkpoint::new();
    for i in 0..rng.gen_range(0..4) {
        c.set_meta(format!("key.{i}"), format!("value {}", rng.gen::<u32>()))
            .unwrap();
    }
    for i in 0..rng.gen_range(1..=8) {
        let group = *LayerGroup::ALL.choose(rng).unwrap();
        c.push(
            format!("t{i}.{}", rng.gen::<u16>()),
            group,
            random_payload(rng),
        )
        .unwrap();
    }
    c
}

fn container_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut bytes_total = 0usize;
    for _ in 0..500 {
        let c = random_checkpoint_mixed(&mut rng);
        let mut bytes = Vec::new();
        write_checkpoint(&c, &mut bytes).map_err(|e| e.to_string())?;
        let back = decode(&bytes).map_err(|e| e.to_string())?;
        check(back == c, || "round trip changed a checkpoint".into())?;
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        check(again == bytes, || "re-serialization changed bytes".into())?;
        bytes_total += bytes.len();
    }

    let mut c = Checkpoint::new();
    c.push("w", LayerGroup::ExpertFFN, random_payload(&mut rng))
        .unwrap();
    c.push_f32(
        "b",
        LayerGroup::Other,
        Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap(),
    )
    .unwrap();
    let mut good = Vec::new();
    write_checkpoint(&c, &mut good).unwrap();
    let index_len = u64::from_le_bytes(good[8..16].try_into().unwrap()) as usize;
    let index = String::from_utf8(good[16..16 + index_len].to_vec()).unwrap();

    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    check(matches!(decode(&bad_magic), Err(Error::BadMagic)), || {
        "bad magic".into()
    })?;

    let mut bad_version = good.clone();
    bad_version[4] = 2;
    check(
        matches!(
            decode(&bad_version),
            Err(Error::VersionMismatch { found: 2, .. })
        ),
        || "version".into(),
    )?;

    check(
        matches!(decode(&good[..good.len() - 1]), Err(Error::Truncated(_))),
        || "truncated data".into(),
    )?;
    check(
        matches!(decode(&good[..10]), Err(Error::Truncated(_))),
        || "truncated header".into(),
    )?;
    check(
        matches!(
            decode(&good[..16 + index_len / 2]),
            Err(Error::Truncated(_))
        ),
        || "truncated index".into(),
    )?;

    let replace_index = |new: &str| {
        assert_eq!(new.len(), index.len());
        let mut b = good.clone();
        b[16..16 + index_len].copy_from_slice(new.as_bytes());
        b
    };
    let malformed = replace_index(&index.replacen("tensor\t", "tensor ", 1));
    check(
        matches!(decode(&malformed), Err(Error::MalformedIndex { .. })),
        || "malformed index".into(),
    )?;
    let wrong_shape = replace_index(&index.replacen("\t3\t", "\t5\t", 1));
    check(
        matches!(decode(&wrong_shape), Err(Error::IndexInconsistent { .. })),
        || "inconsistent index".into(),
    )?;
    let mut trailing = good.clone();
    trailing.push(0);
    check(
        matches!(decode(&trailing), Err(Error::IndexInconsistent { .. })),
        || "trailing bytes".into(),
    )?;

    Ok(format!(
        "500 checkpoints ({bytes_total} bytes) bit-exact; 8 corruptions classified"
    ))
}

#[test]
fn acceptance() {
    let criteria: [(&str, Duration, fn() -> Outcome); 7] = [
        ("size arithmetic", Duration::from_secs(1), size_arithmetic),
        (
            "quantizer properties",
            Duration::from_secs(60),
            quantizer_properties,
        ),
        ("bit packing", Duration::from_secs(10), bit_packing),
        (
            "moe forward invariants",
            Duration::from_secs(30),
            moe_invariants,
        ),
        (
            "sensitivity ordering",
            Duration::from_secs(60),
            sensitivity_ordering,
        ),
        (
            "throughput (report-only) and resident bytes",
            Duration::from_secs(60),
            throughput_bytes,
        ),
        (
            "container round trip",
            Duration::from_secs(10),
            container_round_trip,
        ),
    ];
    let mut failed = Vec::new();
    for (i, (name, limit, f)) in criteria.into_iter().enumerate() {
        match timed(limit, f) {
            Ok(detail) => println!("criterion {} {name}: PASS - {detail}", i + 1),
            Err(why) => {
                println!("criterion {} {name}: FAIL - {why}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
