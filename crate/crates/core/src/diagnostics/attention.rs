use std::io::Write;

use crate::corpora::LabeledDataset;
use crate::diagnostics::forward_batches;
use crate::model::{Mode, ModelConfig, Parameters};
use crate::numerics::{hungarian, Tensor};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerDistance {
    /// Mean over inputs of the matched per-head mean L1 distance.
    pub mean_l1: f64,
    /// Same with heads paired by index (no matching).
    pub unmatched_l1: f64,
    /// `freq[a][b]`: inputs on which head `a` of the first model was matched
    /// to head `b` of the second.
    pub assignment_counts: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttnDistanceReport {
    pub layers: Vec<LayerDistance>,
    pub n_inputs: usize,
}

/// Sum of sorted values, so the total does not depend on visiting order.
fn stable_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// Matches the heads of two models layer by layer on the first `n_inputs`
/// examples.
///
/// For each input and layer the cost of pairing head `a` with head `b` is
/// the mean absolute difference of their attention maps over the valid
/// query/key positions; a minimum-cost assignment is found and its mean
/// cost per head is averaged over inputs.
pub fn attention_match(
    a: (&Parameters, &ModelConfig),
    b: (&Parameters, &ModelConfig),
    data: &LabeledDataset,
    n_inputs: usize,
) -> Result<AttnDistanceReport> {
    let (ca, cb) = (a.1, b.1);
    if ca.num_layers != cb.num_layers || ca.num_heads != cb.num_heads {
        return Err(Error::Compatibility(format!(
            "{}x{} against {}x{} layers x heads",
            ca.num_layers, ca.num_heads, cb.num_layers, cb.num_heads
        )));
    }
    let n = n_inputs.min(data.len());
    if n == 0 {
        return Err(Error::Input("no inputs to compare attention on".into()));
    }
    let max_len = ca.max_len.min(cb.max_len);
    if let Some(e) = data.examples[..n].iter().find(|e| e.ids.len() > max_len) {
        return Err(Error::Length {
            len: e.ids.len(),
            max_len,
        });
    }
    let (layers, heads) = (ca.num_layers, ca.num_heads);
    let idx: Vec<usize> = (0..n).collect();
    let outs_a = forward_batches(a.0, ca, data, &idx, Mode::Mlm, true)?;
    let outs_b = forward_batches(b.0, cb, data, &idx, Mode::Mlm, true)?;

    let mut matched = vec![0.0; layers];
    let mut unmatched = vec![0.0; layers];
    let mut counts = vec![vec![vec![0usize; heads]; heads]; layers];
    for ((ids, batch, oa), (_, _, ob)) in outs_a.iter().zip(&outs_b) {
        let (maps_a, maps_b) = (
            oa.attention.as_ref().unwrap(),
            ob.attention.as_ref().unwrap(),
        );
        let l = batch.seq;
        for (r, &i) in ids.iter().enumerate() {
            let len = data.examples[i].ids.len();
            let denom = (len * len) as f64;
            for layer in 0..layers {
                let (ma, mb) = (&maps_a[layer], &maps_b[layer]);
                let mut cost = Tensor::zeros(&[heads, heads]);
                for ha in 0..heads {
                    let pa = (r * heads + ha) * l * l;
                    for hb in 0..heads {
                        let pb = (r * heads + hb) * l * l;
                        let mut s = 0.0;
                        for q in 0..len {
                            for k in 0..len {
                                s += (ma[pa + q * l + k] - mb[pb + q * l + k]).abs();
                            }
                        }
                        cost.data_mut()[ha * heads + hb] = s / denom;
                    }
                }
                let asg = hungarian(&cost)?;
                let picked = (0..heads).map(|h| cost.get2(h, asg.perm[h])).collect();
                matched[layer] += stable_sum(picked) / heads as f64;
                unmatched[layer] +=
                    stable_sum((0..heads).map(|h| cost.get2(h, h)).collect()) / heads as f64;
                for h in 0..heads {
                    counts[layer][h][asg.perm[h]] += 1;
                }
            }
        }
    }
    Ok(AttnDistanceReport {
        layers: (0..layers)
            .map(|l| LayerDistance {
                mean_l1: matched[l] / n as f64,
                unmatched_l1: unmatched[l] / n as f64,
                assignment_counts: counts[l].clone(),
            })
            .collect(),
        n_inputs: n,
    })
}

/// `layer,mean_l1,n_inputs`, layers numbered from 1.
pub fn write_attention_csv(
    mut out: impl Write,
    report: &AttnDistanceReport,
) -> std::io::Result<()> {
    writeln!(out, "layer,mean_l1,n_inputs")?;
    for (i, l) in report.layers.iter().enumerate() {
        writeln!(out, "{},{},{}", i + 1, l.mean_l1, report.n_inputs)?;
    }
    Ok(())
}
