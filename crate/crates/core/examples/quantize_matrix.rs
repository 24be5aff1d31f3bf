// Quantizes a random matrix with both schemes at every bit width and
// prints the reconstruction error.

use moqe::bitpack::Bits;
use moqe::quant::{quant_error, quantize, Granularity, LogScaleMode, Scheme};
use moqe::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let normal = Normal::new(0.0f32, 0.05)?;
    let a = Tensor::new(
        vec![256, 128],
        (0..256 * 128).map(|_| normal.sample(&mut rng)).collect(),
    )?;

    println!(
        "{:<8} {:>4} {:>12} {:>12} {:>10}",
        "scheme", "bits", "mse", "max_abs", "rel_frob"
    );
    for scheme in [Scheme::LinearAbsMax, Scheme::LogScale] {
        for bits in Bits::ALL {
            let q = quantize(
                &a,
                scheme,
                bits,
                Granularity::PerChannel,
                LogScaleMode::MseOptimal,
            )?;
            let e = quant_error(&a, &q)?;
            println!(
                "{:<8} {:>4} {:>12.3e} {:>12.3e} {:>10.4}",
                scheme.to_string(),
                bits.get(),
                e.mse,
                e.max_abs_err,
                e.relative_frobenius_err
            );
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
