use crate::model::Parameters;
use crate::numerics::Tensor;
use crate::training::TrainConfig;
use crate::{Error, Result};

/// Adam moments plus the number of completed updates.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub m: Parameters,
    pub v: Parameters,
    pub t: u64,
}

impl OptimState {
    pub fn new(params: &Parameters) -> Self {
        let zeros = params.map(|_, p| Tensor::zeros(p.shape()));
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One Adam update with bias correction.
///
/// The step size is `config.lr_at(state.t)`, so the first update uses the
/// full learning rate and bias-correction exponent 1. Gradients are checked
/// for finiteness before anything is modified.
pub fn adam_step(
    params: &mut Parameters,
    grads: &Parameters,
    state: &mut OptimState,
    config: &TrainConfig,
) -> Result<()> {
    let named_g = grads.named();
    let named_p = params.named();
    if named_g.len() != named_p.len()
        || named_g
            .iter()
            .zip(&named_p)
            .any(|((_, g), (_, p))| g.shape() != p.shape())
    {
        return Err(Error::Dimension(
            "gradient shapes disagree with parameters".into(),
        ));
    }
    for (name, g) in &named_g {
        if let Some(i) = g.data().iter().position(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                step: state.t + 1,
                msg: format!("non-finite gradient in {name} at element {i}"),
            });
        }
    }
    let lr = config.lr_at(state.t);
    let (b1, b2) = config.betas;
    let k = (state.t + 1) as i32;
    let c1 = 1.0 - b1.powi(k);
    let c2 = 1.0 - b2.powi(k);
    let eps = config.eps;
    for (((_, p), (_, m)), ((_, v), (_, g))) in params
        .named_mut()
        .into_iter()
        .zip(state.m.named_mut())
        .zip(state.v.named_mut().into_iter().zip(named_g))
    {
        let (p, m, v, g) = (p.data_mut(), m.data_mut(), v.data_mut(), g.data());
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
        }
    }
    state.t += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};
    use crate::numerics::RngState;

    fn small() -> (Parameters, TrainConfig) {
        let cfg = ModelConfig {
            num_layers: 1,
            hidden_dim: 4,
            num_heads: 2,
            ffn_dim: 4,
            vocab_size: 8,
            max_len: 4,
            ..Default::default()
        };
        let p = init_params(&cfg, &RngState::new(3)).unwrap();
        (
            p,
            TrainConfig {
                lr: 0.01,
                total_steps: 10,
                ..Default::default()
            },
        )
    }

    #[test]
    fn zero_gradient_is_noop() {
        let (p, c) = small();
        let mut q = p.clone();
        let mut s = OptimState::new(&p);
        let z = p.map(|_, t| Tensor::zeros(t.shape()));
        adam_step(&mut q, &z, &mut s, &c).unwrap();
        assert_eq!(q, p);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn unit_gradient_moves_by_lr() {
        let (p, c) = small();
        let mut q = p.clone();
        let mut s = OptimState::new(&p);
        let ones = p.map(|_, t| Tensor::full(t.shape(), 1.0));
        adam_step(&mut q, &ones, &mut s, &c).unwrap();
        // m = 0.1, v = 0.001; corrected both give 1, so the step is lr/(1+eps).
        let want = c.lr / (1.0 + c.eps);
        for (a, b) in q.flatten().iter().zip(p.flatten()) {
            assert!((b - a - want).abs() < 1e-15);
        }
    }

    #[test]
    fn frozen_after_schedule_ends() {
        let (p, c) = small();
        let c = TrainConfig {
            total_steps: 2,
            ..c
        };
        let mut q = p.clone();
        let mut s = OptimState::new(&p);
        let ones = p.map(|_, t| Tensor::full(t.shape(), 1.0));
        adam_step(&mut q, &ones, &mut s, &c).unwrap();
        adam_step(&mut q, &ones, &mut s, &c).unwrap();
        let frozen = q.clone();
        adam_step(&mut q, &ones, &mut s, &c).unwrap();
        assert_eq!(q, frozen);
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let (p, c) = small();
        let mut q = p.clone();
        let mut s = OptimState::new(&p);
        let mut g = p.map(|_, t| Tensor::zeros(t.shape()));
        g.layers[0].key_w.data_mut()[2] = f64::NAN;
        let err = adam_step(&mut q, &g, &mut s, &c).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 1, .. }));
        assert_eq!(q, p);
        assert_eq!(s.t, 0);
    }
}
