// Runs the toy model on a few sequences and reports expert load and the
// logit drift after quantizing the expert weights.

use moqe::analysis::degradation;
use moqe::bitpack::Bits;
use moqe::model::{forward_batch, random_checkpoint, ModelSpec};
use moqe::plan::{apply_plan, QuantPlan};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ModelSpec::toy();
    let ckpt = random_checkpoint(&spec, 11)?;
    let seqs = vec![vec![5, 17, 230, 9, 41, 880], vec![999, 0, 64, 128]];

    let reference = forward_batch(&seqs, &ckpt, &spec)?;
    for r in &reference[0].routing {
        println!("{:<8} tokens per expert {:?}", r.block, r.counts);
    }
    for bits in [Bits::B8, Bits::B4, Bits::B2] {
        let q = apply_plan(&ckpt, &QuantPlan::moqe(bits))?;
        let d = degradation(&reference, &forward_batch(&seqs, &q, &spec)?)?;
        println!(
            "int{} experts: logit mse {:.3e}, kl {:.3e}, cosine {:.6}",
            bits.get(),
            d.logit_mse,
            d.kl,
            d.cosine
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
