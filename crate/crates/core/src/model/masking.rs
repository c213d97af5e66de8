use crate::model::{special, Batch};
use crate::numerics::RngState;

/// BERT-style masking.
///
/// Every non-special position (not PAD/UNK/CLS/SEP/MASK) is selected with
/// probability `ratio`. A selected position gets a target equal to its
/// original id and its input is replaced by MASK (80%), a uniformly random
/// content token (10%) or left unchanged (10%).
pub fn mask_tokens(batch: &Batch, ratio: f64, vocab_size: usize, rng: &mut RngState) -> Batch {
    let mut out = batch.clone();
    let mut targets = vec![None; batch.ids.len()];
    let n_content = vocab_size - special::FIRST_CONTENT;
    for (i, &id) in batch.ids.iter().enumerate() {
        if !batch.mask[i] || special::is_reserved(id) {
            continue;
        }
        if !rng.bernoulli(ratio) {
            continue;
        }
        targets[i] = Some(id);
        let r = rng.uniform();
        if r < 0.8 {
            out.ids[i] = special::MASK;
        } else if r < 0.9 {
            out.ids[i] = special::FIRST_CONTENT + rng.below(n_content);
        }
    }
    out.mlm_targets = Some(targets);
    out
}
