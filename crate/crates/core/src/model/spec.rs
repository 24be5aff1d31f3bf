use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which blocks carry an MoE layer instead of a dense FFN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum MoePlacement {
    #[default]
    Even,
    Odd,
    All,
    None,
}

impl MoePlacement {
    pub fn contains(self, layer: usize) -> bool {
        match self {
            MoePlacement::Even => layer % 2 == 0,
            MoePlacement::Odd => layer % 2 == 1,
            MoePlacement::All => true,
            MoePlacement::None => false,
        }
    }
}

impl fmt::Display for MoePlacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MoePlacement::Even => "even",
            MoePlacement::Odd => "odd",
            MoePlacement::All => "all",
            MoePlacement::None => "none",
        })
    }
}

impl FromStr for MoePlacement {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "even" => MoePlacement::Even,
            "odd" => MoePlacement::Odd,
            "all" => MoePlacement::All,
            "none" => MoePlacement::None,
            _ => return Err(Error::Parse(format!("unknown moe placement {s:?}"))),
        })
    }
}

/// Architectural hyperparameters of an encoder-decoder MoE transformer.
///
/// `n_experts == 1` describes a dense model. A stack with zero layers is
/// omitted; a decoder needs an encoder to attend to.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub n_heads: usize,
    pub vocab: usize,
    pub n_experts: usize,
    pub moe_placement: MoePlacement,
}

const KEYS: [&str; 8] = [
    "enc_layers",
    "dec_layers",
    "d_model",
    "d_ffn",
    "n_heads",
    "vocab",
    "n_experts",
    "moe_placement",
];

impl ModelSpec {
    /// Small configuration that runs in well under a second.
    pub fn toy() -> Self {
        Self {
            enc_layers: 4,
            dec_layers: 2,
            d_model: 64,
            d_ffn: 256,
            n_heads: 4,
            vocab: 1000,
            n_experts: 8,
            moe_placement: MoePlacement::Even,
        }
    }

    /// 24/12-layer, d=1024, 32-expert machine translation model (5.3B
    /// parameters).
    pub fn moe_5p3b() -> Self {
        Self {
            enc_layers: 24,
            dec_layers: 12,
            d_model: 1024,
            d_ffn: 4096,
            n_heads: 16,
            vocab: 128_000,
            n_experts: 32,
            moe_placement: MoePlacement::Even,
        }
    }

    /// Dense counterpart of [`ModelSpec::moe_5p3b`].
    pub fn dense_5p3b() -> Self {
        Self {
            n_experts: 1,
            ..Self::moe_5p3b()
        }
    }

    pub fn with_experts(mut self, n: usize) -> Self {
        self.n_experts = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.d_model == 0 || self.n_heads == 0 || self.vocab == 0 {
            return bad("d_model, n_heads and vocab must be positive".into());
        }
        if self.n_experts == 0 {
            return bad("n_experts must be at least 1".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.enc_layers + self.dec_layers > 0 && self.d_ffn == 0 {
            return bad("d_ffn must be positive when the model has layers".into());
        }
        if self.dec_layers > 0 && self.enc_layers == 0 {
            return bad("a decoder needs at least one encoder layer".into());
        }
        Ok(())
    }

    pub fn is_moe_layer(&self, layer: usize) -> bool {
        self.n_experts > 1 && self.moe_placement.contains(layer)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    fn values(&self) -> [String; 8] {
        [
            self.enc_layers.to_string(),
            self.dec_layers.to_string(),
            self.d_model.to_string(),
            self.d_ffn.to_string(),
            self.n_heads.to_string(),
            self.vocab.to_string(),
            self.n_experts.to_string(),
            self.moe_placement.to_string(),
        ]
    }

    /// `key = value` text, one key per line.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .zip(self.values())
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Parses `key = value` lines; `#` starts a comment. `moe_placement`
    /// defaults to `even`; every other key is required.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", i + 1)))?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(Error::Parse(format!("line {}: unknown key {k:?}", i + 1)));
            }
            kv.insert(k.to_string(), v.trim().to_string());
        }
        Self::from_map(|k| kv.get(k).cloned())
    }

    fn from_map(get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let num = |k: &str| -> Result<usize> {
            let v = get(k).ok_or_else(|| Error::Parse(format!("missing key {k}")))?;
            v.parse().map_err(|_| {
                Error::Parse(format!("{k}: expected a non-negative integer, got {v:?}"))
            })
        };
        let spec = Self {
            enc_layers: num("enc_layers")?,
            dec_layers: num("dec_layers")?,
            d_model: num("d_model")?,
            d_ffn: num("d_ffn")?,
            n_heads: num("n_heads")?,
            vocab: num("vocab")?,
            n_experts: num("n_experts")?,
            moe_placement: match get("moe_placement") {
                Some(v) => v.parse()?,
                None => MoePlacement::Even,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checkpoint metadata entries (`spec.<key>`).
    pub fn to_meta(&self) -> Vec<(String, String)> {
        KEYS.iter()
            .zip(self.values())
            .map(|(k, v)| (format!("spec.{k}"), v))
            .collect()
    }

    pub fn from_meta(meta: &BTreeMap<String, String>) -> Result<Self> {
        Self::from_map(|k| meta.get(&format!("spec.{k}")).cloned())
    }
}
