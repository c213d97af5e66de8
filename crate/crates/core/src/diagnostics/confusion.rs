use std::collections::BTreeMap;
use std::io::Write;

use crate::corpora::{Example, Label, LabeledDataset};
use crate::model::{cls_logits, encode, Batch, Head, Labels, ModelConfig, Parameters};
use crate::numerics::{cosine, Graph, RngState};
use crate::{par, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PairCosine {
    pub pair_id: usize,
    pub a: usize,
    pub b: usize,
    pub cosine: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradConfusionStats {
    /// Pairs with a defined cosine, in sampling order.
    pub pairs: Vec<PairCosine>,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    /// Pairs dropped because one gradient had zero norm.
    pub n_excluded: usize,
}

/// Flattened gradient (canonical parameter order) of the task loss on a
/// single example, in eval mode.
pub fn example_gradient(
    params: &Parameters,
    config: &ModelConfig,
    example: &Example,
) -> Result<Vec<f64>> {
    let outputs = params.globals.cls_w.shape()[1];
    if outputs != config.head.outputs() {
        return Err(Error::Compatibility(format!(
            "classifier has {outputs} outputs, config head wants {}",
            config.head.outputs()
        )));
    }
    let labels = match (example.label, config.head) {
        (Label::Class(c), Head::Classes(n)) if c < n => Labels::Classes(vec![c]),
        (Label::Scalar(y), Head::Regression) => Labels::Scalars(vec![y]),
        (l, h) => return Err(Error::Input(format!("label {l:?} does not fit head {h:?}"))),
    };
    let batch = Batch::from_sequences(&[&example.ids], labels)?;
    let mut g = Graph::new();
    let w = params.map(|_, t| g.param(t));
    let enc = encode(&mut g, &w, config, &batch, None, None)?;
    let logits = cls_logits(&mut g, &w, *enc.hidden.last().unwrap(), &batch)?;
    let loss = match &batch.labels {
        Labels::Classes(c) => g.cross_entropy(logits, c)?,
        Labels::Scalars(y) => g.mse(logits, y)?,
        Labels::None => unreachable!(),
    };
    let grads = g.backward(loss)?;
    let mut flat = Vec::with_capacity(params.num_params());
    for (_, &v) in w.named() {
        match grads.get(v) {
            Some(t) => flat.extend_from_slice(t.data()),
            None => flat.extend(std::iter::repeat_n(0.0, g.value(v).numel())),
        }
    }
    Ok(flat)
}

/// Cosine similarities between per-example gradients of `n_pairs` sampled
/// pairs of distinct examples.
pub fn gradient_confusion(
    params: &Parameters,
    config: &ModelConfig,
    data: &LabeledDataset,
    n_pairs: usize,
    seed: u64,
) -> Result<GradConfusionStats> {
    let n = data.len();
    if n < 2 {
        return Err(Error::Input(
            "gradient confusion needs at least two examples".into(),
        ));
    }
    if n_pairs == 0 {
        return Err(Error::Input("n_pairs must be positive".into()));
    }
    let mut rng = RngState::new(seed).split_named("pairs");
    let pairs: Vec<(usize, usize)> = (0..n_pairs)
        .map(|_| {
            let a = rng.below(n);
            let b = rng.below(n - 1);
            (a, if b >= a { b + 1 } else { b })
        })
        .collect();
    let mut needed: BTreeMap<usize, usize> = BTreeMap::new();
    for &(a, b) in &pairs {
        let k = needed.len();
        needed.entry(a).or_insert(k);
        let k = needed.len();
        needed.entry(b).or_insert(k);
    }
    let mut order = vec![0; needed.len()];
    for (&ex, &k) in &needed {
        order[k] = ex;
    }
    let grads = par::map_indices(order.len(), |k| {
        example_gradient(params, config, &data.examples[order[k]])
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::with_capacity(n_pairs);
    let mut excluded = 0;
    for (pair_id, &(a, b)) in pairs.iter().enumerate() {
        match cosine(&grads[needed[&a]], &grads[needed[&b]]) {
            Ok(c) => out.push(PairCosine {
                pair_id,
                a,
                b,
                cosine: c,
            }),
            Err(Error::UndefinedSimilarity(_)) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    if out.is_empty() {
        return Err(Error::UndefinedSimilarity(format!(
            "all {excluded} pairs involve a zero gradient"
        )));
    }
    let mut sorted: Vec<f64> = out.iter().map(|p| p.cosine).collect();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m % 2 == 1 {
        sorted[m / 2]
    } else {
        (sorted[m / 2 - 1] + sorted[m / 2]) / 2.0
    };
    Ok(GradConfusionStats {
        mean: out.iter().map(|p| p.cosine).sum::<f64>() / m as f64,
        median,
        min: sorted[0],
        pairs: out,
        n_excluded: excluded,
    })
}

/// `pair_id,cosine` rows followed by `mean`, `median`, `min` and `excluded`
/// summary rows.
pub fn write_confusion_csv(mut out: impl Write, stats: &GradConfusionStats) -> std::io::Result<()> {
    writeln!(out, "pair_id,cosine")?;
    for p in &stats.pairs {
        writeln!(out, "{},{}", p.pair_id, p.cosine)?;
    }
    writeln!(out, "mean,{}", stats.mean)?;
    writeln!(out, "median,{}", stats.median)?;
    writeln!(out, "min,{}", stats.min)?;
    writeln!(out, "excluded,{}", stats.n_excluded)
}
