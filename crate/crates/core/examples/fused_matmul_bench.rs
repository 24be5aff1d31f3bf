// Multiplies activations by a quantized weight without materializing it,
// then times the toy model across encodings.

use moqe::bench::{matmul_dequant_fused, throughput_report, Variant};
use moqe::bitpack::Bits;
use moqe::model::{random_checkpoint, ModelSpec};
use moqe::quant::{dequantize, quantize_linear, Granularity};
use moqe::report::Format;
use moqe::tensor::Tensor;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let w = Tensor::new(
        vec![64, 32],
        (0..64 * 32)
            .map(|i| ((i * 7 % 13) as f32 - 6.0) * 0.01)
            .collect(),
    )?;
    let x = Tensor::new(
        vec![4, 64],
        (0..4 * 64).map(|i| (i as f32 * 0.1).sin()).collect(),
    )?;
    let q = quantize_linear(&w, Bits::B4, Granularity::PerChannel)?;
    let fused = matmul_dequant_fused(&q, &x)?;
    let d = dequantize(&q);
    let mut worst = 0f32;
    for r in 0..4 {
        for c in 0..32 {
            let naive: f32 = (0..64)
                .map(|k| x.data()[r * 64 + k] * d.data()[k * 32 + c])
                .sum();
            worst = worst.max((naive - fused.data()[r * 32 + c]).abs());
        }
    }
    println!("fused vs dequantize-then-multiply: max difference {worst:.2e}");

    let spec = ModelSpec::toy();
    let ckpt = random_checkpoint(&spec, 0)?;
    let variants: Vec<Variant> = ["f32", "f16", "int8", "int4"]
        .iter()
        .map(|v| v.parse())
        .collect::<Result<_, _>>()?;
    let probe = vec![vec![1, 2, 3, 4, 5, 6, 7, 8]; 2];
    let report = throughput_report(&ckpt, &spec, &variants, &probe, 3, 1)?;
    print!("{}", report.table().render(Format::Text));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
