//! Canonical tensor names and shapes for a [`ModelSpec`].
//!
//! ```text
//! embed.weight                         [vocab, d]      embedding (tied with the output projection)
//! {enc,dec}.{i}.ln{1,2,3}.{gain,bias}  [d]             other
//! {enc,dec}.{i}.self_attn.{q,k,v,o}.*  [d, d] / [d]    self_attn
//! dec.{i}.cross_attn.{q,k,v,o}.*       [d, d] / [d]    cross_attn
//! {enc,dec}.{i}.ffn.fc1.*              [d, f] / [f]    dense_ffn
//! {enc,dec}.{i}.ffn.fc2.*              [f, d] / [d]    dense_ffn
//! {enc,dec}.{i}.moe.router.weight      [d, E]          router
//! {enc,dec}.{i}.moe.expert.{e}.fc{1,2}.*               expert_ffn
//! {enc,dec}.final_ln.{gain,bias}       [d]             other
//! ```
//!
//! Weight matrices are stored `[in, out]`, so the output feature is the
//! column (channel) index.

use crate::checkpoint::{DType, Storage, TensorStorage};
use crate::model::spec::ModelSpec;
use crate::tensor::LayerGroup;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stack {
    Encoder,
    Decoder,
}

impl Stack {
    pub fn prefix(self) -> &'static str {
        match self {
            Stack::Encoder => "enc",
            Stack::Decoder => "dec",
        }
    }
}

/// Block index a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerPos {
    pub stack: Stack,
    pub index: usize,
}

/// Parses the block position out of a canonical tensor name.
pub fn layer_of(name: &str) -> Option<LayerPos> {
    let mut parts = name.split('.');
    let stack = match parts.next()? {
        "enc" => Stack::Encoder,
        "dec" => Stack::Decoder,
        _ => return None,
    };
    let index = parts.next()?.parse().ok()?;
    Some(LayerPos { stack, index })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorDesc {
    pub name: String,
    pub group: LayerGroup,
    pub shape: Vec<usize>,
}

impl TensorDesc {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn layer(&self) -> Option<LayerPos> {
        layer_of(&self.name)
    }

    /// Storage at a float precision.
    pub fn float_storage(&self, dtype: DType) -> TensorStorage {
        TensorStorage {
            name: self.name.clone(),
            group: self.group,
            storage: Storage::float(dtype, self.shape.clone()),
        }
    }
}

pub(crate) fn attn_names(prefix: &str) -> [(String, String); 4] {
    ["q", "k", "v", "o"].map(|p| (format!("{prefix}.{p}.weight"), format!("{prefix}.{p}.bias")))
}

pub fn expert_prefix(block: &str, e: usize) -> String {
    format!("{block}.moe.expert.{e}")
}

/// All tensors of `spec` in serialization order.
pub fn layout(spec: &ModelSpec) -> Vec<TensorDesc> {
    let d = spec.d_model;
    let f = spec.d_ffn;
    let mut out = Vec::new();
    let mut push =
        |name: String, group, shape: Vec<usize>| out.push(TensorDesc { name, group, shape });

    push(
        "embed.weight".into(),
        LayerGroup::Embedding,
        vec![spec.vocab, d],
    );
    for stack in [Stack::Encoder, Stack::Decoder] {
        let n = match stack {
            Stack::Encoder => spec.enc_layers,
            Stack::Decoder => spec.dec_layers,
        };
        for i in 0..n {
            let block = format!("{}.{i}", stack.prefix());
            let attn = |kind: &str, group, push: &mut dyn FnMut(String, LayerGroup, Vec<usize>)| {
                for (w, b) in attn_names(&format!("{block}.{kind}")) {
                    push(w, group, vec![d, d]);
                    push(b, group, vec![d]);
                }
            };
            let norms = |ln: &str, push: &mut dyn FnMut(String, LayerGroup, Vec<usize>)| {
                push(format!("{block}.{ln}.gain"), LayerGroup::Other, vec![d]);
                push(format!("{block}.{ln}.bias"), LayerGroup::Other, vec![d]);
            };
            norms("ln1", &mut push);
            attn("self_attn", LayerGroup::SelfAttention, &mut push);
            norms("ln2", &mut push);
            if stack == Stack::Decoder {
                attn("cross_attn", LayerGroup::CrossAttention, &mut push);
                norms("ln3", &mut push);
            }
            let ffn = |p: &str, group, push: &mut dyn FnMut(String, LayerGroup, Vec<usize>)| {
                push(format!("{p}.fc1.weight"), group, vec![d, f]);
                push(format!("{p}.fc1.bias"), group, vec![f]);
                push(format!("{p}.fc2.weight"), group, vec![f, d]);
                push(format!("{p}.fc2.bias"), group, vec![d]);
            };
            if spec.is_moe_layer(i) {
                push(
                    format!("{block}.moe.router.weight"),
                    LayerGroup::Router,
                    vec![d, spec.n_experts],
                );
                for e in 0..spec.n_experts {
                    ffn(&expert_prefix(&block, e), LayerGroup::ExpertFFN, &mut push);
                }
            } else {
                ffn(&format!("{block}.ffn"), LayerGroup::DenseFFN, &mut push);
            }
        }
        if n > 0 {
            push(
                format!("{}.final_ln.gain", stack.prefix()),
                LayerGroup::Other,
                vec![d],
            );
            push(
                format!("{}.final_ln.bias", stack.prefix()),
                LayerGroup::Other,
                vec![d],
            );
        }
    }
    out
}
