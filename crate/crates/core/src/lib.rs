//! Weight-only quantization toolkit for mixture-of-experts transformers.
//!
//! The crate covers the whole pipeline: linear and log-scale quantizers
//! ([`quant`]), sub-byte code packing ([`bitpack`]), the `MQE1` checkpoint
//! container ([`checkpoint`]), a top-1 gated encoder-decoder model that
//! decodes weights on the fly ([`model`]), quantization plans ([`plan`]),
//! closed-form size accounting ([`sizing`]), distribution and sensitivity
//! analysis ([`analysis`]) and throughput measurement ([`bench`]).

pub mod analysis;
pub mod bench;
pub mod bitpack;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod linalg;
pub mod model;
pub mod plan;
pub mod quant;
pub mod report;
pub mod selftest;
pub mod sizing;
pub mod tensor;

pub use error::{Error, Result};
