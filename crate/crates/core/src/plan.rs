//! Quantization plans: which tensors get quantized, how, and at what float
//! precision everything else is kept.
//!
//! Plans are written as text:
//!
//! ```text
//! # MoQE 4-bit
//! default_bits = 16
//! rule group=expert_ffn layers=all bits=4 scheme=linear granularity=channel
//! ```
//!
//! `default_bits` is 16 or 32. Each `rule` line needs `group` and `bits`;
//! `layers` (`all`, `even`, `odd`) defaults to `all`, `scheme` to `linear`,
//! `granularity` to `channel` and `scale_mode` (`mse`, `absmax`; log scheme
//! only) to `mse`. Two rules may not cover the same (group, layer) pair.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::bitpack::Bits;
use crate::checkpoint::{Checkpoint, DType, Entry, Payload, Storage, TensorStorage};
use crate::error::{Error, Result};
use crate::model::layout::layer_of;
use crate::quant::{quantize, Granularity, LogScaleMode, Scheme};
use crate::tensor::{HalfTensor, LayerGroup};

/// Block-index filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LayerSubset {
    #[default]
    All,
    Even,
    Odd,
}

impl LayerSubset {
    /// Whether a tensor in block `layer` (`None` outside any block) is
    /// selected.
    pub fn contains(self, layer: Option<usize>) -> bool {
        match (self, layer) {
            (LayerSubset::All, _) => true,
            (LayerSubset::Even, Some(i)) => i % 2 == 0,
            (LayerSubset::Odd, Some(i)) => i % 2 == 1,
            (_, None) => false,
        }
    }

    fn overlaps(self, other: LayerSubset) -> bool {
        self == other || self == LayerSubset::All || other == LayerSubset::All
    }
}

impl fmt::Display for LayerSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerSubset::All => "all",
            LayerSubset::Even => "even",
            LayerSubset::Odd => "odd",
        })
    }
}

impl FromStr for LayerSubset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(LayerSubset::All),
            "even" => Ok(LayerSubset::Even),
            "odd" => Ok(LayerSubset::Odd),
            _ => Err(Error::Parse(format!("unknown layer subset {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuantRule {
    pub group: LayerGroup,
    pub layers: LayerSubset,
    pub bits: Bits,
    pub scheme: Scheme,
    pub granularity: Granularity,
    pub log_mode: LogScaleMode,
}

impl QuantRule {
    /// Channel-wise linear quantization of every layer of `group`.
    pub fn new(group: LayerGroup, bits: Bits) -> Self {
        Self {
            group,
            layers: LayerSubset::All,
            bits,
            scheme: Scheme::LinearAbsMax,
            granularity: Granularity::PerChannel,
            log_mode: LogScaleMode::MseOptimal,
        }
    }

    pub fn layers(mut self, layers: LayerSubset) -> Self {
        self.layers = layers;
        self
    }

    pub fn scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn granularity(mut self, granularity: Granularity) -> Self {
        self.granularity = granularity;
        self
    }

    pub fn log_mode(mut self, mode: LogScaleMode) -> Self {
        self.log_mode = mode;
        self
    }

    pub fn selects(&self, name: &str, group: LayerGroup) -> bool {
        group == self.group && self.layers.contains(layer_of(name).map(|p| p.index))
    }

    fn storage(&self, shape: Vec<usize>) -> Storage {
        Storage::quantized(self.scheme, self.bits, self.granularity, shape)
    }
}

impl fmt::Display for QuantRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "rule group={} layers={} bits={} scheme={} granularity={}",
            self.group,
            self.layers,
            self.bits.get(),
            self.scheme,
            self.granularity
        )?;
        if self.scheme == Scheme::LogScale {
            write!(f, " scale_mode={}", self.log_mode)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantPlan {
    rules: Vec<QuantRule>,
    default_dtype: DType,
}

impl Default for QuantPlan {
    fn default() -> Self {
        Self::new()
    }
}

impl QuantPlan {
    /// No quantization; everything stored as binary16.
    pub fn new() -> Self {
        Self {
            rules: Vec::new(),
            default_dtype: DType::F16,
        }
    }

    /// Expert FFN weights channel-wise linear at `bits`, the rest binary16.
    pub fn moqe(bits: Bits) -> Self {
        Self::new()
            .with_rule(QuantRule::new(LayerGroup::ExpertFFN, bits))
            .expect("single rule")
    }

    pub fn with_rule(mut self, rule: QuantRule) -> Result<Self> {
        if let Some(r) = self
            .rules
            .iter()
            .find(|r| r.group == rule.group && r.layers.overlaps(rule.layers))
        {
            return Err(Error::InvalidPlan(format!(
                "rules for {} overlap on layers {} and {}",
                rule.group, r.layers, rule.layers
            )));
        }
        self.rules.push(rule);
        Ok(self)
    }

    /// Precision of tensors no rule quantizes; 16 or 32.
    pub fn with_default_bits(mut self, bits: u32) -> Result<Self> {
        self.default_dtype = match bits {
            16 => DType::F16,
            32 => DType::F32,
            _ => {
                return Err(Error::InvalidPlan(format!(
                    "default_bits must be 16 or 32, got {bits}"
                )))
            }
        };
        Ok(self)
    }

    pub fn rules(&self) -> &[QuantRule] {
        &self.rules
    }

    pub fn default_dtype(&self) -> DType {
        self.default_dtype
    }

    /// The rule that quantizes this tensor, if any. 1-D tensors are never
    /// quantized.
    pub fn rule_for(&self, name: &str, group: LayerGroup, shape: &[usize]) -> Option<&QuantRule> {
        if shape.len() != 2 {
            return None;
        }
        self.rules.iter().find(|r| r.selects(name, group))
    }

    /// Planned encoding of one tensor.
    pub fn storage_for(&self, name: &str, group: LayerGroup, shape: &[usize]) -> Storage {
        match self.rule_for(name, group, shape) {
            Some(r) => r.storage(shape.to_vec()),
            None => Storage::float(self.default_dtype, shape.to_vec()),
        }
    }

    /// Planned encodings for a list of `(name, group, shape)`.
    pub fn plan_storage<'a>(
        &self,
        tensors: impl IntoIterator<Item = (&'a str, LayerGroup, &'a [usize])>,
    ) -> Vec<TensorStorage> {
        tensors
            .into_iter()
            .map(|(name, group, shape)| TensorStorage {
                name: name.to_string(),
                group,
                storage: self.storage_for(name, group, shape),
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let bits = if self.default_dtype == DType::F32 {
            32
        } else {
            16
        };
        let mut s = format!("default_bits = {bits}\n");
        for r in &self.rules {
            s.push_str(&format!("{r}\n"));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut plan = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| Error::Parse(format!("plan line {}: {m}", i + 1));
            if let Some(rest) = line.strip_prefix("rule") {
                let mut group = None;
                let mut bits = None;
                let mut rule_fields = Vec::new();
                for field in rest.split_whitespace() {
                    let (k, v) = field
                        .split_once('=')
                        .ok_or_else(|| err(format!("expected key=value, got {field:?}")))?;
                    match k {
                        "group" => {
                            group = Some(v.parse::<LayerGroup>().map_err(|e| err(e.to_string()))?)
                        }
                        "bits" => {
                            let b: u32 = v.parse().map_err(|_| err(format!("bad bits {v:?}")))?;
                            bits = Some(Bits::new(b)?);
                        }
                        "layers" | "scheme" | "granularity" | "scale_mode" => {
                            rule_fields.push((k, v))
                        }
                        _ => return Err(err(format!("unknown rule field {k:?}"))),
                    }
                }
                let group = group.ok_or_else(|| err("rule needs group=".into()))?;
                let bits = bits.ok_or_else(|| err("rule needs bits=".into()))?;
                let mut rule = QuantRule::new(group, bits);
                for (k, v) in rule_fields {
                    let bad = |e: Error| err(e.to_string());
                    rule = match k {
                        "layers" => rule.layers(v.parse().map_err(bad)?),
                        "scheme" => rule.scheme(v.parse().map_err(bad)?),
                        "granularity" => rule.granularity(v.parse().map_err(bad)?),
                        _ => rule.log_mode(v.parse().map_err(bad)?),
                    };
                }
                plan = plan.with_rule(rule)?;
            } else if let Some((k, v)) = line.split_once('=') {
                if k.trim() != "default_bits" {
                    return Err(err(format!("unknown key {:?}", k.trim())));
                }
                let b: u32 = v
                    .trim()
                    .parse()
                    .map_err(|_| err(format!("bad default_bits {:?}", v.trim())))?;
                plan = plan.with_default_bits(b)?;
            } else {
                return Err(err(format!("cannot parse {line:?}")));
            }
        }
        Ok(plan)
    }
}

/// Encodes `ckpt` according to `plan`: selected matrices are quantized,
/// every other float tensor is cast to the plan's default precision, and
/// already-quantized tensors are kept. Entries are processed in parallel;
/// the result does not depend on the worker count.
pub fn apply_plan(ckpt: &Checkpoint, plan: &QuantPlan) -> Result<Checkpoint> {
    transform(ckpt, plan, Some(plan.default_dtype))
}

/// Quantizes every 2-D tensor of the selected groups and layers, leaving all
/// other tensors untouched. Selected 1-D tensors are skipped with a warning.
pub fn quantize_model(
    ckpt: &Checkpoint,
    groups: &[LayerGroup],
    layers: LayerSubset,
    bits: Bits,
    scheme: Scheme,
    granularity: Granularity,
    log_mode: LogScaleMode,
) -> Result<Checkpoint> {
    if groups.is_empty() {
        return Err(Error::InvalidPlan("empty group list".into()));
    }
    let mut plan = QuantPlan::new();
    for &g in groups {
        let rule = QuantRule::new(g, bits)
            .layers(layers)
            .scheme(scheme)
            .granularity(granularity)
            .log_mode(log_mode);
        plan = plan.with_rule(rule)?;
    }
    transform(ckpt, &plan, None)
}

fn transform(ckpt: &Checkpoint, plan: &QuantPlan, cast: Option<DType>) -> Result<Checkpoint> {
    let skipped = ckpt
        .entries()
        .iter()
        .filter(|e| {
            let shape = e.payload.shape();
            shape.len() != 2 && plan.rules.iter().any(|r| r.selects(&e.name, e.group))
        })
        .count();
    if skipped > 0 {
        log::warn!("skipping {skipped} selected tensors that are not 2-D");
    }
    let payloads = ckpt
        .entries()
        .par_iter()
        .map(|e| encode_entry(e, plan, cast))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Checkpoint::new();
    for (k, v) in ckpt.meta() {
        out.set_meta(k.clone(), v.clone())?;
    }
    for (e, p) in ckpt.entries().iter().zip(payloads) {
        out.push(e.name.clone(), e.group, p)?;
    }
    Ok(out)
}

fn encode_entry(e: &Entry, plan: &QuantPlan, cast: Option<DType>) -> Result<Payload> {
    if e.payload.is_quantized() {
        return Ok(e.payload.clone());
    }
    if let Some(r) = plan.rule_for(&e.name, e.group, &e.payload.shape()) {
        let t = e.payload.to_tensor();
        t.ensure_finite(&e.name)?;
        return Ok(Payload::Quantized(quantize(
            &t,
            r.scheme,
            r.bits,
            r.granularity,
            r.log_mode,
        )?));
    }
    Ok(match (cast, &e.payload) {
        (Some(DType::F16), Payload::F32(t)) => Payload::F16(HalfTensor::from_tensor(t)?),
        (Some(DType::F32), Payload::F16(h)) => Payload::F32(h.to_tensor()),
        (_, p) => p.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let plan = QuantPlan::new()
            .with_rule(QuantRule::new(LayerGroup::ExpertFFN, Bits::B3).scheme(Scheme::LogScale))
            .unwrap()
            .with_rule(QuantRule::new(LayerGroup::DenseFFN, Bits::B8).layers(LayerSubset::Even))
            .unwrap()
            .with_default_bits(32)
            .unwrap();
        assert_eq!(QuantPlan::parse(&plan.to_text()).unwrap(), plan);
    }

    #[test]
    fn overlapping_rules_rejected() {
        let p = QuantPlan::new()
            .with_rule(QuantRule::new(LayerGroup::DenseFFN, Bits::B4).layers(LayerSubset::Even))
            .unwrap();
        assert!(p
            .clone()
            .with_rule(QuantRule::new(LayerGroup::DenseFFN, Bits::B2).layers(LayerSubset::Odd))
            .is_ok());
        assert!(matches!(
            p.with_rule(QuantRule::new(LayerGroup::DenseFFN, Bits::B2)),
            Err(Error::InvalidPlan(_))
        ));
    }

    #[test]
    fn parse_errors() {
        assert!(QuantPlan::parse("rule group=expert_ffn bits=5").is_err());
        assert!(QuantPlan::parse("rule bits=4").is_err());
        assert!(QuantPlan::parse("default_bits = 8").is_err());
        assert!(QuantPlan::parse("rule group=expert_ffn bits=4 colour=red").is_err());
    }

    #[test]
    fn subset_filter() {
        assert!(LayerSubset::Even.contains(Some(0)));
        assert!(!LayerSubset::Even.contains(Some(3)));
        assert!(!LayerSubset::Odd.contains(None));
        assert!(LayerSubset::All.contains(None));
    }
}
