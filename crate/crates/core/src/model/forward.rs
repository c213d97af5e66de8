use crate::model::{special, ModelConfig, Weights};
use crate::numerics::{Graph, RngState, Tensor, Var};
use crate::{Error, Result};

/// Supervision attached to a [`Batch`].
#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    None,
    Classes(Vec<usize>),
    Scalars(Vec<f64>),
}

/// Padded batch of token-id sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub batch: usize,
    pub seq: usize,
    /// `batch x seq`, row-major, `special::PAD` past each sequence's end.
    pub ids: Vec<usize>,
    /// `true` at real tokens.
    pub mask: Vec<bool>,
    pub labels: Labels,
    /// Masked-LM targets, set only at positions selected for prediction.
    pub mlm_targets: Option<Vec<Option<usize>>>,
}

impl Batch {
    /// Pads `seqs` to the longest one.
    pub fn from_sequences(seqs: &[&[usize]], labels: Labels) -> Result<Self> {
        if seqs.is_empty() || seqs.iter().any(|s| s.is_empty()) {
            return Err(Error::Input("batch needs non-empty sequences".into()));
        }
        let seq = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut ids = vec![special::PAD; seqs.len() * seq];
        let mut mask = vec![false; seqs.len() * seq];
        for (b, s) in seqs.iter().enumerate() {
            ids[b * seq..b * seq + s.len()].copy_from_slice(s);
            mask[b * seq..b * seq + s.len()]
                .iter_mut()
                .for_each(|m| *m = true);
        }
        Ok(Self {
            batch: seqs.len(),
            seq,
            ids,
            mask,
            labels,
            mlm_targets: None,
        })
    }

    fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.seq > config.max_len {
            return Err(Error::Length {
                len: self.seq,
                max_len: config.max_len,
            });
        }
        if self.ids.len() != self.batch * self.seq || self.mask.len() != self.ids.len() {
            return Err(Error::Dimension(
                "batch buffers disagree with batch x seq".into(),
            ));
        }
        if let Some(&bad) = self.ids.iter().find(|&&i| i >= config.vocab_size) {
            return Err(Error::Index(format!(
                "token id {bad} outside vocab of {}",
                config.vocab_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Mlm,
    Cls,
}

/// Result of an eval-mode [`forward`].
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `hidden[0]` is the embedding output, `hidden[l]` the output of layer
    /// `l`; each `(batch*seq) x d`.
    pub hidden: Vec<Tensor>,
    /// MLM: `batch x seq x vocab`; Cls: `batch x outputs`.
    pub logits: Tensor,
    /// Per layer, `batch x heads x seq x seq`.
    pub attention: Option<Vec<Vec<f64>>>,
}

/// Graph handles produced by [`encode`].
#[derive(Clone, Debug)]
pub struct Encoded {
    pub hidden: Vec<Var>,
    pub attention: Vec<Var>,
    /// The word-embedding rows fed into the encoder.
    pub word_embeddings: Var,
}

fn dropout(g: &mut Graph, x: Var, p: f64, rng: &mut Option<&mut RngState>) -> Result<Var> {
    match rng {
        Some(r) if p > 0.0 => {
            let keep: Vec<bool> = (0..g.value(x).numel()).map(|_| !r.bernoulli(p)).collect();
            g.dropout(x, &keep, p)
        }
        _ => Ok(x),
    }
}

/// Builds the encoder on `g`.
///
/// Dropout is active iff `train_rng` is given. `word_embeddings`, when
/// given, replaces the token-embedding lookup (it must be
/// `(batch*seq) x d`); it is how the input Jacobian is taken.
pub fn encode(
    g: &mut Graph,
    w: &Weights<Var>,
    config: &ModelConfig,
    batch: &Batch,
    mut train_rng: Option<&mut RngState>,
    word_embeddings: Option<Var>,
) -> Result<Encoded> {
    batch.validate(config)?;
    let (b, l, p) = (batch.batch, batch.seq, config.dropout_prob);
    let word = match word_embeddings {
        Some(v) => {
            if g.value(v).shape() != [b * l, config.hidden_dim] {
                return Err(Error::Dimension("word embedding override shape".into()));
            }
            v
        }
        None => g.gather_rows(w.globals.token_emb, &batch.ids)?,
    };
    let positions: Vec<usize> = (0..b).flat_map(|_| 0..l).collect();
    let pos = g.gather_rows(w.globals.pos_emb, &positions)?;
    let x = g.add(word, pos)?;
    let x = g.layer_norm(x, w.globals.emb_ln_gain, w.globals.emb_ln_bias)?;
    let mut x = dropout(g, x, p, &mut train_rng)?;

    let mut hidden = vec![x];
    let mut attention = Vec::with_capacity(config.num_layers);
    for lw in &w.layers {
        let q = g.linear(x, lw.query_w, lw.query_b)?;
        let k = g.linear(x, lw.key_w, lw.key_b)?;
        let v = g.linear(x, lw.value_w, lw.value_b)?;
        let ctx = g.attention(q, k, v, b, l, config.num_heads, &batch.mask)?;
        attention.push(ctx);
        let a = g.linear(ctx, lw.attn_out_w, lw.attn_out_b)?;
        let a = dropout(g, a, p, &mut train_rng)?;
        let r = g.add(x, a)?;
        let x1 = g.layer_norm(r, lw.attn_ln_gain, lw.attn_ln_bias)?;
        let f = g.linear(x1, lw.ffn_in_w, lw.ffn_in_b)?;
        let f = g.gelu(f);
        let f = g.linear(f, lw.ffn_out_w, lw.ffn_out_b)?;
        let f = dropout(g, f, p, &mut train_rng)?;
        let r = g.add(x1, f)?;
        x = g.layer_norm(r, lw.ffn_ln_gain, lw.ffn_ln_bias)?;
        hidden.push(x);
    }
    Ok(Encoded {
        hidden,
        attention,
        word_embeddings: word,
    })
}

/// MLM head over selected hidden rows (`n x d` -> `n x vocab`).
pub fn mlm_logits(g: &mut Graph, w: &Weights<Var>, rows: Var) -> Result<Var> {
    let t = g.linear(rows, w.globals.mlm_transform_w, w.globals.mlm_transform_b)?;
    let t = g.gelu(t);
    let t = g.layer_norm(t, w.globals.mlm_ln_gain, w.globals.mlm_ln_bias)?;
    g.linear(t, w.globals.mlm_decoder_w, w.globals.mlm_decoder_b)
}

/// Linear head on the raw position-0 (CLS) hidden state of each sequence.
pub fn cls_logits(g: &mut Graph, w: &Weights<Var>, last: Var, batch: &Batch) -> Result<Var> {
    for b in 0..batch.batch {
        if batch.ids[b * batch.seq] != special::CLS {
            return Err(Error::Contract(format!(
                "sequence {b} does not start with the CLS token"
            )));
        }
    }
    let rows: Vec<usize> = (0..batch.batch).map(|b| b * batch.seq).collect();
    let cls = g.gather_rows(last, &rows)?;
    g.linear(cls, w.globals.cls_w, w.globals.cls_b)
}

/// Eval-mode forward pass (no dropout). Pure in `(params, batch)`.
pub fn forward(
    params: &Weights<Tensor>,
    config: &ModelConfig,
    batch: &Batch,
    mode: Mode,
    record_attention: bool,
) -> Result<ForwardOutput> {
    let mut g = Graph::new();
    let w = params.map(|_, t| g.constant(t));
    let enc = encode(&mut g, &w, config, batch, None, None)?;
    let last = *enc.hidden.last().unwrap();
    let logits = match mode {
        Mode::Mlm => {
            let lv = mlm_logits(&mut g, &w, last)?;
            g.value(lv)
                .clone()
                .reshape(vec![batch.batch, batch.seq, config.vocab_size])?
        }
        Mode::Cls => {
            let lv = cls_logits(&mut g, &w, last, batch)?;
            g.value(lv).clone()
        }
    };
    let attention = record_attention.then(|| {
        enc.attention
            .iter()
            .map(|&a| g.attention_probs(a).unwrap().to_vec())
            .collect()
    });
    Ok(ForwardOutput {
        hidden: enc.hidden.iter().map(|&h| g.value(h).clone()).collect(),
        logits,
        attention,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::model::special::{CLS, SEP};

    fn cfg() -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            hidden_dim: 16,
            num_heads: 4,
            ffn_dim: 24,
            vocab_size: 12,
            max_len: 8,
            ..Default::default()
        }
    }

    fn batch() -> Batch {
        let a = [CLS, 5, 6, 7, SEP];
        let b = [CLS, 9, SEP];
        Batch::from_sequences(&[&a, &b], Labels::Classes(vec![0, 1])).unwrap()
    }

    #[test]
    fn shapes_and_attention_rows() {
        let c = cfg();
        let p = init_params(&c, &RngState::new(0)).unwrap();
        let bt = batch();
        let out = forward(&p, &c, &bt, Mode::Mlm, true).unwrap();
        assert_eq!(out.logits.shape(), &[2, 5, 12]);
        assert_eq!(out.hidden.len(), 3);
        let att = out.attention.unwrap();
        for layer in &att {
            for bi in 0..2 {
                for h in 0..4 {
                    for i in 0..5 {
                        let row = &layer[((bi * 4 + h) * 5 + i) * 5..][..5];
                        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                        assert!(row.iter().all(|&x| x >= 0.0));
                        if bi == 1 {
                            assert_eq!(row[3], 0.0);
                            assert_eq!(row[4], 0.0);
                        }
                    }
                }
            }
        }
        let cls = forward(&p, &c, &bt, Mode::Cls, false).unwrap();
        assert_eq!(cls.logits.shape(), &[2, 2]);
    }

    #[test]
    fn padding_does_not_change_real_positions() {
        let c = cfg();
        let p = init_params(&c, &RngState::new(1)).unwrap();
        let short = [CLS, 9, SEP];
        let alone = Batch::from_sequences(&[&short], Labels::None).unwrap();
        let padded = batch();
        let o1 = forward(&p, &c, &alone, Mode::Cls, false).unwrap();
        let o2 = forward(&p, &c, &padded, Mode::Cls, false).unwrap();
        for j in 0..2 {
            assert!((o1.logits.get2(0, j) - o2.logits.get2(1, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        let c = cfg();
        let p = init_params(&c, &RngState::new(0)).unwrap();
        let long: Vec<usize> = std::iter::once(CLS)
            .chain(std::iter::repeat_n(5, 8))
            .collect();
        let b = Batch::from_sequences(&[&long], Labels::None).unwrap();
        assert!(matches!(
            forward(&p, &c, &b, Mode::Mlm, false),
            Err(Error::Length { len: 9, max_len: 8 })
        ));
        let no_cls = [5, 6, SEP];
        let b = Batch::from_sequences(&[&no_cls], Labels::None).unwrap();
        assert!(matches!(
            forward(&p, &c, &b, Mode::Cls, false),
            Err(Error::Contract(_))
        ));
        let oov = [CLS, 12];
        let b = Batch::from_sequences(&[&oov], Labels::None).unwrap();
        assert!(matches!(
            forward(&p, &c, &b, Mode::Mlm, false),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn eval_forward_is_pure() {
        let c = cfg();
        let p = init_params(&c, &RngState::new(4)).unwrap();
        let a = forward(&p, &c, &batch(), Mode::Mlm, false).unwrap();
        let b = forward(&p, &c, &batch(), Mode::Mlm, false).unwrap();
        assert_eq!(a.logits, b.logits);
    }
}
