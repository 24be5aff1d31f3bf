// Writes a quantized toy checkpoint to an MQE1 container and reads it back.

use moqe::bitpack::Bits;
use moqe::checkpoint::{load, save};
use moqe::model::{random_checkpoint, ModelSpec};
use moqe::plan::{apply_plan, QuantPlan};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ModelSpec::toy();
    let ckpt = random_checkpoint(&spec, 0)?;
    let quantized = apply_plan(&ckpt, &QuantPlan::moqe(Bits::B4))?;

    let dir = std::env::temp_dir().join(format!("moqe-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("toy-int4.mqe");
    let written = save(&quantized, &path)?;
    let back = load(&path)?;
    std::fs::remove_dir_all(&dir)?;

    assert_eq!(back, quantized);
    assert_eq!(ModelSpec::from_meta(back.meta())?, spec);
    let n_quantized = back
        .entries()
        .iter()
        .filter(|e| e.payload.is_quantized())
        .count();
    println!(
        "{} tensors, {n_quantized} quantized, {written} bytes on disk",
        back.len()
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
