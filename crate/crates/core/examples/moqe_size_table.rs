// Prints predicted checkpoint sizes for the large MoE and dense specs.

use moqe::bitpack::Bits;
use moqe::model::ModelSpec;
use moqe::plan::QuantPlan;
use moqe::report::Format;
use moqe::sizing::{param_count, size_report};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let moe = ModelSpec::moe_5p3b();
    let dense = ModelSpec::dense_5p3b();
    println!(
        "moe params {}, dense params {}",
        param_count(&moe).total(),
        param_count(&dense).total()
    );

    let fp16 = size_report(&moe, &QuantPlan::new())?;
    let dense_fp16 = size_report(&dense, &QuantPlan::new())?;
    println!(
        "moe fp16 {} bytes, {:.2}x the dense model",
        fp16.fp16_bytes,
        fp16.fp16_bytes as f64 / dense_fp16.fp16_bytes as f64
    );
    for bits in [Bits::B8, Bits::B4, Bits::B3, Bits::B2] {
        let r = size_report(&moe, &QuantPlan::moqe(bits))?;
        let vs_dense = r.planned_bytes as f64 / dense_fp16.fp16_bytes as f64;
        println!(
            "experts int{}: ratio {:.4}, {:.2}x dense fp16",
            bits.get(),
            r.ratio,
            vs_dense
        );
    }
    print!(
        "{}",
        size_report(&moe, &QuantPlan::moqe(Bits::B4))?
            .group_table()
            .render(Format::Text)
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
