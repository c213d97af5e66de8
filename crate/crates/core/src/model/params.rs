use crate::model::ModelConfig;
use crate::numerics::{RngState, Tensor};
use crate::Result;

/// Standard deviation of every freshly sampled weight matrix (variance
/// 4e-4, the BERT initializer).
pub const INIT_STD: f64 = 0.02;

macro_rules! weight_struct {
    ($(#[$m:meta])* $name:ident { $($field:ident),* $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<T> {
            $(pub $field: T,)*
        }

        impl<T> $name<T> {
            pub fn map<U>(&self, f: &mut impl FnMut(&str, &T) -> U) -> $name<U> {
                $name { $($field: f(stringify!($field), &self.$field),)* }
            }

            fn visit<'a>(&'a self, f: &mut impl FnMut(&'static str, &'a T)) {
                $(f(stringify!($field), &self.$field);)*
            }

            fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(&'static str, &'a mut T)) {
                $(f(stringify!($field), &mut self.$field);)*
            }
        }
    };
}

weight_struct!(
    /// One encoder block.
    LayerWeights {
        query_w, query_b, key_w, key_b, value_w, value_b,
        attn_out_w, attn_out_b, attn_ln_gain, attn_ln_bias,
        ffn_in_w, ffn_in_b, ffn_out_w, ffn_out_b, ffn_ln_gain, ffn_ln_bias,
    }
);

weight_struct!(
    /// Non-layer weights; the per-layer blocks live in [`Weights::layers`].
    Globals {
        token_emb, pos_emb, emb_ln_gain, emb_ln_bias,
        mlm_transform_w, mlm_transform_b, mlm_ln_gain, mlm_ln_bias,
        mlm_decoder_w, mlm_decoder_b, cls_w, cls_b,
    }
);

/// Full weight set, generic over the leaf type so the same layout carries
/// tensors, graph variables and gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<T> {
    pub globals: Globals<T>,
    pub layers: Vec<LayerWeights<T>>,
}

pub type Parameters = Weights<Tensor>;

impl<T> Weights<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> Weights<U> {
        Weights {
            globals: self.globals.map(&mut f),
            layers: self.layers.iter().map(|l| l.map(&mut f)).collect(),
        }
    }

    /// `(name, leaf)` pairs in canonical (checkpoint) order.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        let g = &self.globals;
        out.push(("token_emb".to_string(), &g.token_emb));
        out.push(("pos_emb".to_string(), &g.pos_emb));
        out.push(("emb_ln_gain".to_string(), &g.emb_ln_gain));
        out.push(("emb_ln_bias".to_string(), &g.emb_ln_bias));
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&mut |n, t| out.push((format!("layer{i}.{n}"), t)));
        }
        let mut rest = Vec::new();
        g.visit(&mut |n, t| rest.push((n, t)));
        out.extend(rest.into_iter().skip(4).map(|(n, t)| (n.to_string(), t)));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut T)> {
        let mut head = Vec::new();
        let mut tail = Vec::new();
        let mut k = 0;
        self.globals.visit_mut(&mut |n, t| {
            if k < 4 {
                head.push((n.to_string(), t));
            } else {
                tail.push((n.to_string(), t));
            }
            k += 1;
        });
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&mut |n, t| head.push((format!("layer{i}.{n}"), t)));
        }
        head.extend(tail);
        head
    }
}

impl Parameters {
    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }

    /// All parameters concatenated in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for (_, t) in self.named() {
            v.extend_from_slice(t.data());
        }
        v
    }

    /// Replaces the classifier head with a fresh `N(0, INIT_STD²)` head of
    /// `outputs` units.
    pub fn reset_classifier(&mut self, outputs: usize, rng: &mut RngState) {
        let d = self.globals.cls_w.shape()[0];
        self.globals.cls_w = normal(&[d, outputs], rng);
        self.globals.cls_b = Tensor::zeros(&[outputs]);
    }
}

fn normal(shape: &[usize], rng: &mut RngState) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for x in t.data_mut() {
        *x = INIT_STD * rng.normal();
    }
    t
}

/// Fresh parameters: weight matrices `N(0, 0.02²)`, layer-norm gains 1,
/// biases 0.
pub fn init_params(config: &ModelConfig, rng: &RngState) -> Result<Parameters> {
    config.validate()?;
    let (d, f, v) = (config.hidden_dim, config.ffn_dim, config.vocab_size);
    let mut rng = rng.split_named("init");
    let block = |rng: &mut RngState| LayerWeights {
        query_w: normal(&[d, d], rng),
        query_b: Tensor::zeros(&[d]),
        key_w: normal(&[d, d], rng),
        key_b: Tensor::zeros(&[d]),
        value_w: normal(&[d, d], rng),
        value_b: Tensor::zeros(&[d]),
        attn_out_w: normal(&[d, d], rng),
        attn_out_b: Tensor::zeros(&[d]),
        attn_ln_gain: Tensor::ones(&[d]),
        attn_ln_bias: Tensor::zeros(&[d]),
        ffn_in_w: normal(&[d, f], rng),
        ffn_in_b: Tensor::zeros(&[f]),
        ffn_out_w: normal(&[f, d], rng),
        ffn_out_b: Tensor::zeros(&[d]),
        ffn_ln_gain: Tensor::ones(&[d]),
        ffn_ln_bias: Tensor::zeros(&[d]),
    };
    let token_emb = normal(&[v, d], &mut rng);
    let pos_emb = normal(&[config.max_len, d], &mut rng);
    let layers = (0..config.num_layers).map(|_| block(&mut rng)).collect();
    let globals = Globals {
        token_emb,
        pos_emb,
        emb_ln_gain: Tensor::ones(&[d]),
        emb_ln_bias: Tensor::zeros(&[d]),
        mlm_transform_w: normal(&[d, d], &mut rng),
        mlm_transform_b: Tensor::zeros(&[d]),
        mlm_ln_gain: Tensor::ones(&[d]),
        mlm_ln_bias: Tensor::zeros(&[d]),
        mlm_decoder_w: normal(&[d, v], &mut rng),
        mlm_decoder_b: Tensor::zeros(&[v]),
        cls_w: normal(&[d, config.head.outputs()], &mut rng),
        cls_b: Tensor::zeros(&[config.head.outputs()]),
    };
    Ok(Weights { globals, layers })
}

/// Re-samples the token embedding matrix (and the positional table when
/// `positional` is set); every other tensor is left untouched.
pub fn re_embed(params: &Parameters, rng: &RngState, positional: bool) -> Parameters {
    let mut out = params.clone();
    let mut rng = rng.split_named("re-embed");
    out.globals.token_emb = normal(params.globals.token_emb.shape(), &mut rng);
    if positional {
        out.globals.pos_emb = normal(params.globals.pos_emb.shape(), &mut rng);
    }
    out
}
