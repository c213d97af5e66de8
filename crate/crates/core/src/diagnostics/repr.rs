use crate::corpora::LabeledDataset;
use crate::diagnostics::forward_batches;
use crate::model::{Mode, ModelConfig, Parameters};
use crate::numerics::{RngState, Tensor};
use crate::{Error, Result};

/// Hidden vectors of sampled token positions, one row per position.
#[derive(Clone, Debug, PartialEq)]
pub struct ReprMatrix {
    /// `n x d`, `n > d`.
    pub data: Tensor,
    pub layer: usize,
    /// `(example, position)` of each row.
    pub positions: Vec<(usize, usize)>,
}

/// `n_points` distinct non-PAD token positions drawn uniformly, sorted.
pub fn sample_positions(
    data: &LabeledDataset,
    n_points: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    let all: Vec<(usize, usize)> = data
        .examples
        .iter()
        .enumerate()
        .flat_map(|(i, e)| (0..e.ids.len()).map(move |p| (i, p)))
        .collect();
    if n_points > all.len() {
        return Err(Error::Sampling(format!(
            "{n_points} points requested from {} token positions",
            all.len()
        )));
    }
    let mut rng = RngState::new(seed).split_named("positions");
    let mut pick = rng.permutation(all.len());
    pick.truncate(n_points);
    pick.sort_unstable();
    Ok(pick.into_iter().map(|k| all[k]).collect())
}

/// Layer-`layer` hidden vectors (1-based; layer 0 is the embedding output)
/// at the given positions.
pub fn representations_at(
    params: &Parameters,
    config: &ModelConfig,
    data: &LabeledDataset,
    layer: usize,
    positions: &[(usize, usize)],
) -> Result<ReprMatrix> {
    if layer > config.num_layers {
        return Err(Error::Index(format!(
            "layer {layer} outside 0..={}",
            config.num_layers
        )));
    }
    let d = config.hidden_dim;
    let mut examples: Vec<usize> = positions.iter().map(|p| p.0).collect();
    examples.dedup();
    if examples.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Input("positions must be sorted".into()));
    }
    if let Some(&(i, p)) = positions
        .iter()
        .find(|&&(i, p)| i >= data.len() || p >= data.examples[i].ids.len())
    {
        return Err(Error::Index(format!(
            "position ({i}, {p}) outside the dataset"
        )));
    }
    // MLM mode: no CLS requirement on the inputs.
    let outs = forward_batches(params, config, data, &examples, Mode::Mlm, false)?;
    // example -> (batch, row within batch)
    let mut locate = vec![None; data.len()];
    for (b, (idx, _, _)) in outs.iter().enumerate() {
        for (r, &i) in idx.iter().enumerate() {
            locate[i] = Some((b, r));
        }
    }
    let mut rows = Vec::with_capacity(positions.len() * d);
    for &(i, p) in positions {
        let (b, r) = locate[i].expect("example was forwarded");
        rows.extend_from_slice(outs[b].2.hidden[layer].row(r * outs[b].1.seq + p));
    }
    Ok(ReprMatrix {
        data: Tensor::new(vec![positions.len(), d], rows)?,
        layer,
        positions: positions.to_vec(),
    })
}

/// Samples `n_points > hidden_dim` positions with `seed` and returns their
/// layer-`layer` representations (`layer` in `1..=num_layers`).
pub fn collect_representations(
    params: &Parameters,
    config: &ModelConfig,
    data: &LabeledDataset,
    layer: usize,
    n_points: usize,
    seed: u64,
) -> Result<ReprMatrix> {
    if layer == 0 || layer > config.num_layers {
        return Err(Error::Index(format!(
            "layer {layer} outside 1..={}",
            config.num_layers
        )));
    }
    if n_points <= config.hidden_dim {
        return Err(Error::Sampling(format!(
            "need more points than hidden_dim {}, got {n_points}",
            config.hidden_dim
        )));
    }
    let positions = sample_positions(data, n_points, seed)?;
    let m = representations_at(params, config, data, layer, &positions)?;
    m.data.check_finite("representations")?;
    Ok(m)
}
