// Box-plot statistics and skewness per layer group, then the per-channel
// and per-tensor error on the most skewed tensor.

use moqe::analysis::{checkpoint_stats, granularity_comparison, skewness, stats_table};
use moqe::bitpack::Bits;
use moqe::model::{synthetic_checkpoint, ModelSpec};
use moqe::quant::Scheme;
use moqe::report::Format;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let ckpt = synthetic_checkpoint(&ModelSpec::toy(), 4)?;
    print!(
        "{}",
        stats_table(&checkpoint_stats(&ckpt, false)?).render(Format::Text)
    );

    let mut most = None;
    for e in ckpt
        .entries()
        .iter()
        .filter(|e| e.payload.shape().len() == 2)
    {
        let g = skewness(&e.payload.to_tensor())?;
        if most
            .as_ref()
            .is_none_or(|(_, best): &(String, f64)| g.abs() > best.abs())
        {
            most = Some((e.name.clone(), g));
        }
    }
    let (name, g) = most.ok_or("no matrices")?;
    let t = ckpt.payload(&name)?.to_tensor();
    let (pc, pt) = granularity_comparison(&t, Bits::B4, Scheme::LinearAbsMax)?;
    println!("\n{name}: skewness {g:.3}");
    println!(
        "int4 per-channel mse {:.3e}, per-tensor mse {:.3e}",
        pc.mse, pt.mse
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
