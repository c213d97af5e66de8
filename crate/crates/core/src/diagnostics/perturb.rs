use std::io::Write;

use crate::corpora::LabeledDataset;
use crate::diagnostics::forward_batches;
use crate::model::{Mode, ModelConfig, Parameters};
use crate::numerics::RngState;
use crate::{par, Error, Result};

pub const DEFAULT_SIGMAS: [f64; 4] = [1e-2, 1e-4, 1e-6, 1e-8];

/// Which output is compared before and after perturbation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OutputSite {
    /// Last-layer hidden vector at position 0.
    #[default]
    LastHiddenCls,
    Logits,
}

impl std::str::FromStr for OutputSite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last-hidden-cls" => Ok(OutputSite::LastHiddenCls),
            "logits" => Ok(OutputSite::Logits),
            _ => Err(Error::Config(format!("unknown output site {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SigmaRow {
    pub sigma: f64,
    /// Over finite draws; NaN when every draw diverged.
    pub mean_dist: f64,
    /// Sample standard deviation over finite draws.
    pub std_dist: f64,
    /// Finite draws.
    pub n_draws: usize,
    /// Draws whose perturbed output was not finite.
    pub n_diverged: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbReport {
    pub site: OutputSite,
    pub rows: Vec<SigmaRow>,
}

/// Eval-mode output vector of every example at `site`.
pub fn output_vectors(
    params: &Parameters,
    config: &ModelConfig,
    data: &LabeledDataset,
    site: OutputSite,
) -> Result<Vec<Vec<f64>>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for (ids, batch, fo) in forward_batches(params, config, data, &idx, Mode::Cls, false)? {
        for r in 0..ids.len() {
            out.push(match site {
                OutputSite::LastHiddenCls => fo.hidden.last().unwrap().row(r * batch.seq).to_vec(),
                OutputSite::Logits => fo.logits.row(r).to_vec(),
            });
        }
    }
    Ok(out)
}

/// Mean output L2 distance after adding `N(0, sigma²)` noise to every
/// parameter, per sigma over `n_draws` independent draws.
///
/// The noise of draw `k` at `sigma` depends only on `(seed, sigma, k)`.
/// `sigma = 0` adds no noise and reports exactly zero.
pub fn perturbation_variance(
    params: &Parameters,
    config: &ModelConfig,
    data: &LabeledDataset,
    sigmas: &[f64],
    n_draws: usize,
    seed: u64,
    site: OutputSite,
) -> Result<PerturbReport> {
    if let Some(s) = sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(Error::Config(format!(
            "sigma {s} must be finite and non-negative"
        )));
    }
    if n_draws == 0 {
        return Err(Error::Config("n_draws must be positive".into()));
    }
    if data.is_empty() {
        return Err(Error::Input("no examples to perturb on".into()));
    }
    let clean = output_vectors(params, config, data, site)?;
    let root = RngState::new(seed).split_named("perturb");
    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let dists: Vec<Option<f64>> = if sigma == 0.0 {
            vec![Some(0.0); n_draws]
        } else {
            par::map_indices(n_draws, |k| -> Result<Option<f64>> {
                let mut rng = root.split(sigma.to_bits()).split(k as u64);
                let noisy = params.map(|_, t| {
                    let mut t = t.clone();
                    for x in t.data_mut() {
                        *x += sigma * rng.normal();
                    }
                    t
                });
                let out = output_vectors(&noisy, config, data, site)?;
                let mut total = 0.0;
                for (a, b) in out.iter().zip(&clean) {
                    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                    total += d2.sqrt();
                }
                let mean = total / data.len() as f64;
                Ok(mean.is_finite().then_some(mean))
            })
            .into_iter()
            .collect::<Result<_>>()?
        };
        let finite: Vec<f64> = dists.iter().flatten().copied().collect();
        let m = finite.len();
        let mean = finite.iter().sum::<f64>() / m as f64;
        let std = if m > 1 {
            (finite.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt()
        } else {
            0.0
        };
        rows.push(SigmaRow {
            sigma,
            mean_dist: if m == 0 { f64::NAN } else { mean },
            std_dist: if m == 0 { f64::NAN } else { std },
            n_draws: m,
            n_diverged: n_draws - m,
        });
    }
    Ok(PerturbReport { site, rows })
}

/// `sigma,mean_dist,std_dist,n_draws`.
pub fn write_perturb_csv(mut out: impl Write, report: &PerturbReport) -> std::io::Result<()> {
    writeln!(out, "sigma,mean_dist,std_dist,n_draws")?;
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.sigma, r.mean_dist, r.std_dist, r.n_draws
        )?;
    }
    Ok(())
}
