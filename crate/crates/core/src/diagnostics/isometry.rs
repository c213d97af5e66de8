use std::io::Write;

use crate::model::{encode, Batch, Labels, ModelConfig, Parameters};
use crate::numerics::{svd, Graph, Tensor};
use crate::{par, Error, Result};

/// Largest `seq_len * hidden_dim` accepted for a full Jacobian.
pub const MAX_JACOBIAN_DIM: usize = 4096;

/// Singular values of the last-layer / input-embedding Jacobian.
#[derive(Clone, Debug, PartialEq)]
pub struct SingularSpectrum {
    /// Non-increasing, non-negative; length `seq_len * hidden_dim`.
    pub values: Vec<f64>,
    pub seq_len: usize,
    pub hidden_dim: usize,
}

impl SingularSpectrum {
    /// `(lo, hi, count)` over `bins` equal-width bins spanning
    /// `[0, max]`; the top edge is inclusive.
    pub fn histogram(&self, bins: usize) -> Vec<(f64, f64, usize)> {
        let bins = bins.max(1);
        let top = self.values.first().copied().unwrap_or(0.0);
        let width = if top > 0.0 { top / bins as f64 } else { 1.0 };
        let mut counts = vec![0usize; bins];
        for &v in &self.values {
            counts[((v / width) as usize).min(bins - 1)] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(i, c)| (i as f64 * width, (i + 1) as f64 * width, c))
            .collect()
    }
}

/// Full Jacobian of the last-layer hidden states (flattened row-major,
/// `L*d`) with respect to the input word embeddings (`L*d`), in eval mode.
/// Row `r` holds the gradient of output coordinate `r`.
pub fn jacobian(params: &Parameters, config: &ModelConfig, ids: &[usize]) -> Result<Tensor> {
    let (l, d) = (ids.len(), config.hidden_dim);
    let n = l * d;
    if n > MAX_JACOBIAN_DIM {
        return Err(Error::Size(format!(
            "jacobian of {n} x {n} exceeds the {MAX_JACOBIAN_DIM} budget"
        )));
    }
    if let Some(&bad) = ids.iter().find(|&&t| t >= config.vocab_size) {
        return Err(Error::Index(format!("token id {bad} outside vocab")));
    }
    let batch = Batch::from_sequences(&[ids], Labels::None)?;
    let emb = &params.globals.token_emb;
    let rows: Vec<f64> = ids.iter().flat_map(|&t| emb.row(t).to_vec()).collect();
    let mut g = Graph::new();
    let w = params.map(|_, t| g.constant(t));
    let x = g.leaf(Tensor::new(vec![l, d], rows)?.with_requires_grad(true));
    let enc = encode(&mut g, &w, config, &batch, None, Some(x))?;
    let out = *enc.hidden.last().expect("at least one layer");
    let g = &g;
    let rows = par::map_indices(n, |r| -> Result<Vec<f64>> {
        let mut seed = Tensor::zeros(&[l, d]);
        seed.data_mut()[r] = 1.0;
        let grads = g.vjp(out, seed)?;
        Ok(grads
            .get(x)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; n]))
    });
    let mut data = Vec::with_capacity(n * n);
    for r in rows {
        data.extend(r?);
    }
    Tensor::new(vec![n, n], data)
}

/// Singular values of [`jacobian`], sorted descending.
pub fn jacobian_singular_values(
    params: &Parameters,
    config: &ModelConfig,
    ids: &[usize],
) -> Result<SingularSpectrum> {
    let j = jacobian(params, config, ids)?;
    Ok(SingularSpectrum {
        values: svd(&j)?.s,
        seq_len: ids.len(),
        hidden_dim: config.hidden_dim,
    })
}

/// `rank,sigma`, ranks from 1.
pub fn write_spectrum_csv(mut out: impl Write, spectrum: &SingularSpectrum) -> std::io::Result<()> {
    writeln!(out, "rank,sigma")?;
    for (i, s) in spectrum.values.iter().enumerate() {
        writeln!(out, "{},{s}", i + 1)?;
    }
    Ok(())
}
