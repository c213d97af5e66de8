#![allow(dead_code)]

use xfer_core::corpora::{
    gen_motif_task, inject_tokens, CorpusKind, CorpusSpec, LabeledDataset, Vocab,
};
use xfer_core::model::{init_params, ModelConfig, Parameters};
use xfer_core::numerics::RngState;

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        num_layers: 2,
        hidden_dim: 16,
        num_heads: 4,
        ffn_dim: 32,
        vocab_size: 24,
        max_len: 24,
        dropout_prob: 0.1,
        ..Default::default()
    }
}

pub fn tiny_params(seed: u64) -> (Parameters, ModelConfig) {
    let c = tiny_config();
    (init_params(&c, &RngState::new(seed)).unwrap(), c)
}

/// Motif task injected into a 24-token model vocabulary.
pub fn tiny_task(lines: usize, seed: u64) -> LabeledDataset {
    let spec = CorpusSpec {
        kind: CorpusKind::MotifTask,
        min_len: 8,
        max_len: 14,
        motif_len: 3,
        lines,
        seed,
        ..Default::default()
    };
    let task = gen_motif_task(&spec).unwrap();
    let model_vocab = Vocab::synthetic(24, 0).unwrap();
    inject_tokens(&task.vocab, &model_vocab, seed, true)
        .unwrap()
        .apply_dataset(&task.dataset)
        .unwrap()
}
