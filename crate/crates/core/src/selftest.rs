//! Invariant checks bundled with the library and run by `moqe selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bench::matmul_dequant_fused;
use crate::bitpack::{pack, packed_len, unpack, Bits, CodeArray};
use crate::checkpoint::Payload;
use crate::checkpoint::{decode, write_checkpoint};
use crate::linalg::matmul;
use crate::model::{random_checkpoint, top1_route, ModelSpec};
use crate::plan::{apply_plan, QuantPlan};
use crate::quant::{dequantize, log_exponent, quantize_linear, Granularity};
use crate::tensor::Tensor;

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub outcome: Result<(), String>,
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-3.0f32..3.0))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("consistent shape")
}

fn pack_round_trip(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for bits in Bits::ALL {
        for count in 0..=64 {
            let codes: Vec<i8> = (0..count)
                .map(|_| rng.gen_range(bits.min_code()..=bits.max_code()) as i8)
                .collect();
            let arr = CodeArray::new(bits, codes).map_err(|e| e.to_string())?;
            let packed = pack(&arr);
            ensure(packed.len() == packed_len(bits, count), || {
                format!("b={} n={count}: length", bits.get())
            })?;
            let back = unpack(&packed, bits, count).map_err(|e| e.to_string())?;
            ensure(back == arr, || {
                format!("b={} n={count}: codes differ", bits.get())
            })?;
        }
    }
    Ok(())
}

fn linear_bound(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for bits in Bits::ALL {
        for gran in [Granularity::PerChannel, Granularity::PerTensor] {
            let a = random_matrix(rng, 9, 7);
            let q = quantize_linear(&a, bits, gran).map_err(|e| e.to_string())?;
            let d = dequantize(&q);
            for (i, (x, y)) in a.data().iter().zip(d.data()).enumerate() {
                let s = q.scale_for(i % 7);
                ensure((x - y).abs() <= s / 2.0, || {
                    format!("b={} {gran}: |{x} - {y}| > {s}/2", bits.get())
                })?;
            }
        }
    }
    Ok(())
}

fn log_nearest_power(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for bits in Bits::ALL {
        let m = 1i32 << (bits.get() - 1);
        for _ in 0..500 {
            let t: f64 = rng.gen_range(2f64.powi(1 - m)..1.0);
            let k = log_exponent(t as f32, 1.0, bits) as i32;
            let t = t as f32 as f64;
            let err = |k: i32| (t - 2f64.powi(-k)).abs();
            let best = (0..m)
                .min_by(|&a, &b| err(a).total_cmp(&err(b)))
                .unwrap_or(0);
            ensure(err(k) <= err(best), || {
                format!("b={} t={t}: k={k} but {best} is nearer", bits.get())
            })?;
        }
    }
    Ok(())
}

fn router_invariants(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for experts in [1usize, 2, 8] {
        let h = random_matrix(rng, 16, 12);
        let w = random_matrix(rng, 12, experts);
        let r = top1_route(&h, &Payload::F32(w)).map_err(|e| e.to_string())?;
        ensure(r.counts(experts).iter().sum::<usize>() == 16, || {
            "token counts do not sum".into()
        })?;
        ensure(r.gates.iter().all(|&g| g > 0.0 && g <= 1.0), || {
            "gate outside (0, 1]".into()
        })?;
        if experts == 1 {
            ensure(r.gates.iter().all(|&g| g == 1.0), || {
                "single expert gate not 1".into()
            })?;
        }
    }
    Ok(())
}

fn fused_matches_unfused(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let a = random_matrix(rng, 64, 64);
    let x = random_matrix(rng, 64, 64);
    let q = quantize_linear(&a, Bits::B4, Granularity::PerChannel).map_err(|e| e.to_string())?;
    let fused = matmul_dequant_fused(&q, &x).map_err(|e| e.to_string())?;
    let unfused = matmul(&x, &Payload::F32(dequantize(&q))).map_err(|e| e.to_string())?;
    ensure(fused == unfused, || {
        "fused product differs from dequantize-then-multiply".into()
    })
}

fn container_round_trip() -> Result<(), String> {
    let ckpt = random_checkpoint(&ModelSpec::toy(), 7).map_err(|e| e.to_string())?;
    let q = apply_plan(&ckpt, &QuantPlan::moqe(Bits::B3)).map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    write_checkpoint(&q, &mut bytes).map_err(|e| e.to_string())?;
    let back = decode(&bytes).map_err(|e| e.to_string())?;
    ensure(back == q, || {
        "container round trip changed the checkpoint".into()
    })
}

/// Runs every check with a fixed seed.
pub fn run() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f);
    vec![
        Check {
            name: "bitpack round trip",
            outcome: pack_round_trip(&mut rng),
        },
        Check {
            name: "linear error bound",
            outcome: linear_bound(&mut rng),
        },
        Check {
            name: "log nearest power of two",
            outcome: log_nearest_power(&mut rng),
        },
        Check {
            name: "router invariants",
            outcome: router_invariants(&mut rng),
        },
        Check {
            name: "fused dequant matmul",
            outcome: fused_matches_unfused(&mut rng),
        },
        Check {
            name: "container round trip",
            outcome: container_round_trip(),
        },
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run() {
            assert_eq!(c.outcome, Ok(()), "{}", c.name);
        }
    }
}
