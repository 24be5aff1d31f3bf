//! Seeded checkpoint generators.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::analysis::skewness_of;
use crate::checkpoint::{Checkpoint, Payload};
use crate::error::Result;
use crate::model::layout::{layout, TensorDesc};
use crate::model::spec::ModelSpec;
use crate::tensor::{LayerGroup, Tensor};

/// Skewness targeted for dense FFN output projections by
/// [`synthetic_checkpoint`].
pub const DENSE_FC2_SKEW: f64 = -1.84;

const BIAS_STD: f32 = 0.02;

fn init_tensor(desc: &TensorDesc, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = desc.numel();
    let leaf = desc.name.rsplit('.').next().unwrap_or("");
    let std = match (desc.shape.len(), leaf) {
        (1, "gain") => return vec![1.0; n],
        (1, _) if desc.name.contains("ln") => return vec![0.0; n],
        (1, _) => BIAS_STD,
        _ if desc.group == LayerGroup::Embedding => 1.0 / (desc.shape[1] as f32).sqrt(),
        _ => 1.0 / (desc.shape[0] as f32).sqrt(),
    };
    let normal = Normal::new(0.0, std).expect("positive standard deviation");
    (0..n).map(|_| normal.sample(rng)).collect()
}

/// Checkpoint for `spec` with Gaussian weights (standard deviation
/// `1/sqrt(fan_in)`), small random biases and unit norm gains. Records the
/// spec in the metadata.
pub fn random_checkpoint(spec: &ModelSpec, seed: u64) -> Result<Checkpoint> {
    build(spec, seed, |_, data, _| data)
}

/// Like [`random_checkpoint`], but every dense FFN `fc2` weight gets a heavy
/// negative tail: a seeded set of entries is replaced by values 8-10 standard
/// deviations below zero, with the count chosen so the tensor's skewness is
/// as close as possible to [`DENSE_FC2_SKEW`]. Expert weights stay Gaussian.
pub fn synthetic_checkpoint(spec: &ModelSpec, seed: u64) -> Result<Checkpoint> {
    build(spec, seed, |desc, data, rng| {
        if desc.group == LayerGroup::DenseFFN && desc.name.ends_with("fc2.weight") {
            inject_negative_tail(
                data,
                1.0 / (desc.shape[0] as f32).sqrt(),
                DENSE_FC2_SKEW,
                rng,
            )
        } else {
            data
        }
    })
}

fn build(
    spec: &ModelSpec,
    seed: u64,
    mut shape_weights: impl FnMut(&TensorDesc, Vec<f32>, &mut ChaCha8Rng) -> Vec<f32>,
) -> Result<Checkpoint> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ckpt = Checkpoint::new();
    for (k, v) in spec.to_meta() {
        ckpt.set_meta(k, v)?;
    }
    for desc in layout(spec) {
        let data = init_tensor(&desc, &mut rng);
        let data = shape_weights(&desc, data, &mut rng);
        let t = Tensor::new(desc.shape.clone(), data)?;
        ckpt.push(desc.name, desc.group, Payload::F32(t))?;
    }
    Ok(ckpt)
}

fn inject_negative_tail(base: Vec<f32>, std: f32, target: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = base.len();
    let max_count = (n * 3 / 100).max(1).min(n);
    let positions = sample(rng, n, max_count).into_vec();
    let tail: Vec<f32> = (0..max_count)
        .map(|_| -std * rng.gen_range(8.0..10.0))
        .collect();
    let with = |count: usize| {
        let mut d = base.clone();
        for (&p, &v) in positions.iter().zip(&tail).take(count) {
            d[p] = v;
        }
        d
    };
    // Skewness falls monotonically over this range of outlier fractions.
    let (mut lo, mut hi) = (0, max_count);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if skewness_of(&with(mid)).unwrap_or(0.0) > target {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    let best = [lo.saturating_sub(1), lo]
        .into_iter()
        .min_by(|&a, &b| {
            let da = (skewness_of(&with(a)).unwrap_or(0.0) - target).abs();
            let db = (skewness_of(&with(b)).unwrap_or(0.0) - target).abs();
            da.total_cmp(&db)
        })
        .unwrap_or(lo);
    with(best)
}
