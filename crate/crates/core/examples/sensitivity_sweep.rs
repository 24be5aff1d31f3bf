// Quantizes one layer group at a time and measures output degradation.

use moqe::analysis::{sensitivity_table, Harness, Target};
use moqe::model::{synthetic_checkpoint, ModelSpec};
use moqe::plan::LayerSubset;
use moqe::quant::{Granularity, Scheme};
use moqe::report::Format;
use moqe::tensor::LayerGroup;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ModelSpec::toy();
    let ckpt = synthetic_checkpoint(&spec, 2)?;
    let probe = vec![vec![5, 17, 230, 9, 41, 880, 3], vec![7, 7, 7, 1, 2, 3]];
    let harness = Harness::new(&ckpt, &spec, &probe)?;

    let mut reports = Vec::new();
    for group in [
        LayerGroup::ExpertFFN,
        LayerGroup::DenseFFN,
        LayerGroup::SelfAttention,
    ] {
        for bits in [2, 4, 8] {
            let target = Target {
                group,
                layers: LayerSubset::All,
            };
            reports.push(harness.run(
                target,
                bits,
                Scheme::LinearAbsMax,
                Granularity::PerChannel,
            )?);
        }
    }
    for subset in [LayerSubset::Even, LayerSubset::Odd, LayerSubset::All] {
        reports.push(harness.dense_subset(subset, 2)?);
    }
    print!("{}", sensitivity_table(&reports).render(Format::Text));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
