//! Parameter counts and exact serialized-size predictions.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::checkpoint::{container_len, read_index, DType, Storage, TensorStorage};
use crate::error::Result;
use crate::model::{layout, ModelSpec};
use crate::plan::QuantPlan;
use crate::report::{num, Table};
use crate::tensor::LayerGroup;

/// Parameters per layer group, in [`LayerGroup::ALL`] order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCounts {
    pub per_group: Vec<(LayerGroup, u64)>,
}

impl ParamCounts {
    fn from_tensors(tensors: &[TensorStorage]) -> Self {
        let per_group = LayerGroup::ALL
            .iter()
            .map(|&g| {
                let n = tensors
                    .iter()
                    .filter(|t| t.group == g)
                    .map(|t| t.storage.numel() as u64)
                    .sum();
                (g, n)
            })
            .collect();
        Self { per_group }
    }

    pub fn total(&self) -> u64 {
        self.per_group.iter().map(|(_, n)| n).sum()
    }

    pub fn get(&self, group: LayerGroup) -> u64 {
        self.per_group
            .iter()
            .find(|(g, _)| *g == group)
            .map_or(0, |(_, n)| *n)
    }

    pub fn fraction(&self, group: LayerGroup) -> f64 {
        self.get(group) as f64 / self.total() as f64
    }
}

/// Parameter count of every group of `spec`: attention `4d² + 4d` per
/// attention block, FFN `2·d·d_ffn + d_ffn + d` per dense block or expert,
/// router `d·n_experts` per MoE block, `2d` per layer norm and a single
/// tied `vocab·d` embedding.
pub fn param_count(spec: &ModelSpec) -> ParamCounts {
    ParamCounts::from_tensors(&float_storage(spec, DType::F32))
}

fn float_storage(spec: &ModelSpec, dtype: DType) -> Vec<TensorStorage> {
    layout(spec)
        .iter()
        .map(|t| t.float_storage(dtype))
        .collect()
}

/// Predicted container sizes for a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeReport {
    pub params: ParamCounts,
    /// Planned encoding of every tensor, in container order.
    pub tensors: Vec<TensorStorage>,
    pub meta: BTreeMap<String, String>,
    /// Container size with every tensor stored as binary16.
    pub fp16_bytes: u64,
    /// Container size under the plan.
    pub planned_bytes: u64,
    /// Code, scale and float bytes under the plan, without container
    /// headers, index or alignment padding.
    pub payload_bytes: u64,
    pub fp16_payload_bytes: u64,
    pub per_group_bytes: Vec<(LayerGroup, u64)>,
    pub ratio: f64,
    /// Fraction of parameters in expert FFNs.
    pub moe_weight_fraction: f64,
}

impl SizeReport {
    /// Relative size reduction, `1 - ratio`.
    pub fn reduction(&self) -> f64 {
        1.0 - self.ratio
    }

    pub fn group_table(&self) -> Table {
        let mut t = Table::new(["group", "params", "fraction", "planned_bytes"]);
        for ((g, n), (_, b)) in self.params.per_group.iter().zip(&self.per_group_bytes) {
            t.push([
                g.to_string(),
                n.to_string(),
                num(self.params.fraction(*g)),
                b.to_string(),
            ]);
        }
        t
    }

    pub fn summary_table(&self) -> Table {
        let mut t = Table::new(["metric", "value"]);
        let rows = [
            ("total_params", self.params.total().to_string()),
            ("moe_weight_fraction", num(self.moe_weight_fraction)),
            ("fp16_bytes", self.fp16_bytes.to_string()),
            ("planned_bytes", self.planned_bytes.to_string()),
            ("payload_bytes", self.payload_bytes.to_string()),
            ("ratio", num(self.ratio)),
            ("reduction", num(self.reduction())),
        ];
        for (k, v) in rows {
            t.push([k.to_string(), v]);
        }
        t
    }
}

fn payload_len(s: &Storage) -> u64 {
    s.data_len() + s.scale_len()
}

/// Size prediction for an arbitrary tensor list. `meta` is the metadata the
/// container will carry; it contributes to the index length.
pub fn size_report_for(
    tensors: &[(String, LayerGroup, Vec<usize>)],
    meta: &BTreeMap<String, String>,
    plan: &QuantPlan,
) -> SizeReport {
    let planned = plan.plan_storage(
        tensors
            .iter()
            .map(|(n, g, s)| (n.as_str(), *g, s.as_slice())),
    );
    let fp16: Vec<TensorStorage> = tensors
        .iter()
        .map(|(n, g, s)| TensorStorage {
            name: n.clone(),
            group: *g,
            storage: Storage::float(DType::F16, s.clone()),
        })
        .collect();
    let params = ParamCounts::from_tensors(&fp16);
    let fp16_bytes = container_len(meta, &fp16);
    let planned_bytes = container_len(meta, &planned);
    let per_group_bytes = LayerGroup::ALL
        .iter()
        .map(|&g| {
            (
                g,
                planned
                    .iter()
                    .filter(|t| t.group == g)
                    .map(|t| payload_len(&t.storage))
                    .sum(),
            )
        })
        .collect();
    SizeReport {
        moe_weight_fraction: params.fraction(LayerGroup::ExpertFFN),
        params,
        payload_bytes: planned.iter().map(|t| payload_len(&t.storage)).sum(),
        fp16_payload_bytes: fp16.iter().map(|t| payload_len(&t.storage)).sum(),
        tensors: planned,
        meta: meta.clone(),
        fp16_bytes,
        planned_bytes,
        per_group_bytes,
        ratio: planned_bytes as f64 / fp16_bytes as f64,
    }
}

/// Size prediction for the canonical layout of `spec`, with the spec
/// recorded in the container metadata.
pub fn size_report(spec: &ModelSpec, plan: &QuantPlan) -> Result<SizeReport> {
    spec.validate()?;
    let tensors: Vec<_> = layout(spec)
        .into_iter()
        .map(|t| (t.name, t.group, t.shape))
        .collect();
    let meta = spec.to_meta().into_iter().collect();
    Ok(size_report_for(&tensors, &meta, plan))
}

/// A tensor whose planned and recorded encodings differ.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorDelta {
    pub name: String,
    pub expected: Option<Storage>,
    pub actual: Option<Storage>,
    /// Actual minus expected payload bytes.
    pub bytes: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub predicted: u64,
    pub actual: u64,
    pub deltas: Vec<TensorDelta>,
}

impl Verification {
    /// Relative deviation of the file size from the prediction.
    pub fn relative_error(&self) -> f64 {
        (self.actual as f64 - self.predicted as f64).abs() / self.predicted as f64
    }

    /// File within 1% of the prediction and every tensor encoded as planned.
    pub fn passed(&self) -> bool {
        self.relative_error() <= 0.01 && self.deltas.is_empty()
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(["tensor", "expected", "actual", "byte_delta"]);
        let show = |s: &Option<Storage>| match s {
            None => "missing".to_string(),
            Some(s) => format!("{}/{}/{:?}", s.dtype.tag(), s.bits, s.shape),
        };
        for d in &self.deltas {
            t.push([
                d.name.clone(),
                show(&d.expected),
                show(&d.actual),
                d.bytes.to_string(),
            ]);
        }
        t
    }
}

/// Compares a prediction with the container at `path`, reading only its
/// header and index.
pub fn verify_against_checkpoint(
    report: &SizeReport,
    path: impl AsRef<Path>,
) -> Result<Verification> {
    let path = path.as_ref();
    let actual = fs::metadata(path)?.len();
    let index = read_index(&mut std::io::BufReader::new(fs::File::open(path)?))?;
    let mut recorded: BTreeMap<&str, &Storage> = index
        .records
        .iter()
        .map(|r| (r.name.as_str(), &r.storage))
        .collect();
    let mut deltas = Vec::new();
    for t in &report.tensors {
        match recorded.remove(t.name.as_str()) {
            Some(s) if *s == t.storage => {}
            other => deltas.push(TensorDelta {
                name: t.name.clone(),
                expected: Some(t.storage.clone()),
                actual: other.cloned(),
                bytes: other.map_or(0, |s| payload_len(s) as i64) - payload_len(&t.storage) as i64,
            }),
        }
    }
    for (name, s) in recorded {
        deltas.push(TensorDelta {
            name: name.to_string(),
            expected: None,
            actual: Some(s.clone()),
            bytes: payload_len(s) as i64,
        });
    }
    Ok(Verification {
        predicted: report.planned_bytes,
        actual,
        deltas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitpack::Bits;

    #[test]
    fn embedding_only_count() {
        let spec = ModelSpec {
            enc_layers: 0,
            dec_layers: 0,
            d_ffn: 0,
            n_experts: 1,
            ..ModelSpec::toy()
        };
        let c = param_count(&spec);
        assert_eq!(c.total(), (spec.vocab * spec.d_model) as u64);
        assert_eq!(c.get(LayerGroup::Embedding), c.total());
    }

    #[test]
    fn empty_plan_is_exactly_one() {
        let r = size_report(&ModelSpec::toy(), &QuantPlan::new()).unwrap();
        assert_eq!(r.ratio, 1.0);
        assert_eq!(r.planned_bytes, r.fp16_bytes);
    }

    #[test]
    fn ratio_monotone_in_bits() {
        let spec = ModelSpec::toy();
        let ratios: Vec<f64> = Bits::ALL
            .iter()
            .map(|&b| size_report(&spec, &QuantPlan::moqe(b)).unwrap().ratio)
            .collect();
        assert!(ratios.windows(2).all(|w| w[0] < w[1]), "{ratios:?}");
        assert!(ratios[3] < 1.0);
    }
}
