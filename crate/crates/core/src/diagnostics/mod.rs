//! Representation similarity, attention matching and training-stability
//! probes. Every routine is pure in its checkpoints, data and seed.

mod attention;
mod confusion;
mod isometry;
mod perturb;
mod pwcca;
mod repr;

pub use attention::{attention_match, write_attention_csv, AttnDistanceReport, LayerDistance};
pub use confusion::{
    example_gradient, gradient_confusion, write_confusion_csv, GradConfusionStats, PairCosine,
};
pub use isometry::{
    jacobian, jacobian_singular_values, write_spectrum_csv, SingularSpectrum, MAX_JACOBIAN_DIM,
};
pub use perturb::{
    output_vectors, perturbation_variance, write_perturb_csv, OutputSite, PerturbReport, SigmaRow,
    DEFAULT_SIGMAS,
};
pub use pwcca::{pwcca, pwcca_both, write_pwcca_csv, PwccaResult, DEFAULT_VARIANCE_KEPT};
pub use repr::{collect_representations, representations_at, sample_positions, ReprMatrix};

use crate::corpora::LabeledDataset;
use crate::model::{forward, Batch, ForwardOutput, Labels, Mode, ModelConfig, Parameters};
use crate::{par, Result};

/// Eval batches used by every diagnostic that walks a dataset.
pub(crate) const EVAL_BATCH: usize = 32;

/// Eval-mode forwards over consecutive slices of `examples`, in order.
pub(crate) fn forward_batches(
    params: &Parameters,
    config: &ModelConfig,
    data: &LabeledDataset,
    examples: &[usize],
    mode: Mode,
    record_attention: bool,
) -> Result<Vec<(Vec<usize>, Batch, ForwardOutput)>> {
    let n = examples.len().div_ceil(EVAL_BATCH);
    par::map_indices(n, |b| {
        let idx = examples[b * EVAL_BATCH..((b + 1) * EVAL_BATCH).min(examples.len())].to_vec();
        let refs: Vec<&[usize]> = idx
            .iter()
            .map(|&i| data.examples[i].ids.as_slice())
            .collect();
        let batch = Batch::from_sequences(&refs, Labels::None)?;
        let out = forward(params, config, &batch, mode, record_attention)?;
        Ok((idx, batch, out))
    })
    .into_iter()
    .collect()
}
