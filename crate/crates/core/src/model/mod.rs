//! Post-LN transformer encoder with MLM and classification heads.

mod checkpoint;
mod config;
mod forward;
mod masking;
mod params;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointManifest,
    TensorEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{Head, ModelConfig};
pub use forward::{
    cls_logits, encode, forward, mlm_logits, Batch, Encoded, ForwardOutput, Labels, Mode,
};
pub use masking::mask_tokens;
pub use params::{init_params, re_embed, LayerWeights, Parameters, Weights, INIT_STD};

/// Reserved vocabulary ids.
pub mod special {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const CLS: usize = 2;
    pub const SEP: usize = 3;
    pub const MASK: usize = 4;
    /// First content id; everything below is reserved.
    pub const FIRST_CONTENT: usize = 5;
    pub const NAMES: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

    pub fn is_reserved(id: usize) -> bool {
        id < FIRST_CONTENT
    }
}
