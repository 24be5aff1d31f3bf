//! Desk-scale encoder-decoder transformer with top-1 gated MoE blocks.

pub mod forward;
pub mod init;
pub mod layout;
pub mod moe;
pub mod spec;

pub use forward::{check_checkpoint, forward_batch, model_forward, BlockRouting, ForwardOutput};
pub use init::{random_checkpoint, synthetic_checkpoint};
pub use layout::{layer_of, layout, LayerPos, Stack, TensorDesc};
pub use moe::{moe_ffn_forward, top1_route, ExpertBank, Ffn, Routing};
pub use spec::{ModelSpec, MoePlacement};
