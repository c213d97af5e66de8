use serde_json::json;

use crate::corpora::{Corpus, Label, LabelKind, LabeledDataset, Vocab};
use crate::model::{
    cls_logits, encode, forward, init_params, mask_tokens, mlm_logits, re_embed, special, Batch,
    CheckpointManifest, Head, Labels, Mode, ModelConfig, Parameters, Weights,
};
use crate::numerics::{Graph, RngState, Tensor, Var};
use crate::training::curve::Window;
use crate::training::{
    adam_step, evaluate, CheckpointSelection, InitMode, LossCurve, MetricKind, MetricReport,
    OptimState, Predictions, TrainConfig,
};
use crate::{par, Error, Result};

/// Seeded shuffle per epoch; the last batch of an epoch may be short.
struct Batcher {
    n: usize,
    size: usize,
    rng: RngState,
    order: Vec<usize>,
    pos: usize,
}

impl Batcher {
    fn new(n: usize, size: usize, rng: RngState) -> Self {
        Self {
            n,
            size,
            rng,
            order: Vec::new(),
            pos: n,
        }
    }

    fn next(&mut self) -> Vec<usize> {
        if self.pos >= self.n {
            self.order = self.rng.permutation(self.n);
            self.pos = 0;
        }
        let end = (self.pos + self.size).min(self.n);
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }
}

enum Objective<'a> {
    Mlm,
    Cls(&'a Head),
}

/// Loss and parameter gradients for one batch in training mode.
fn loss_and_grads(
    params: &Parameters,
    config: &ModelConfig,
    batch: &Batch,
    objective: Objective,
    dropout_rng: &mut RngState,
) -> Result<(f64, Parameters)> {
    let mut g = Graph::new();
    let w: Weights<Var> = params.map(|_, t| g.param(t));
    let enc = encode(&mut g, &w, config, batch, Some(dropout_rng), None)?;
    let last = *enc.hidden.last().expect("at least one layer");
    let loss = match objective {
        Objective::Mlm => {
            let targets = batch.mlm_targets.as_deref().unwrap_or_default();
            let (rows, ids): (Vec<usize>, Vec<usize>) = targets
                .iter()
                .enumerate()
                .filter_map(|(i, t)| t.map(|t| (i, t)))
                .unzip();
            let sel = g.gather_rows(last, &rows)?;
            let logits = mlm_logits(&mut g, &w, sel)?;
            g.cross_entropy(logits, &ids)?
        }
        Objective::Cls(head) => {
            let logits = cls_logits(&mut g, &w, last, batch)?;
            match (&batch.labels, head) {
                (Labels::Classes(c), Head::Classes(_)) => g.cross_entropy(logits, c)?,
                (Labels::Scalars(y), Head::Regression) => g.mse(logits, y)?,
                _ => return Err(Error::Contract("batch labels do not match the head".into())),
            }
        }
    };
    let value = g.value(loss).data()[0];
    let grads = g.backward(loss)?;
    let grads = w.map(|_, &v| {
        grads
            .get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(g.value(v).shape()))
    });
    Ok((value, grads))
}

fn check_loss(loss: f64, step: u64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            step,
            msg: format!("loss is {loss}"),
        })
    }
}

/// Result of [`pretrain_mlm`].
#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub params: Parameters,
    pub manifest: CheckpointManifest,
    pub curve: LossCurve,
}

/// Masked-LM pretraining on `corpus`.
///
/// Each line is wrapped as `CLS line SEP` and truncated to `max_len`.
/// Batches with no selected position leave the parameters untouched but
/// still count as a step.
pub fn pretrain_mlm(
    corpus: &Corpus,
    vocab: &Vocab,
    model: &ModelConfig,
    train: &TrainConfig,
) -> Result<PretrainOutcome> {
    model.validate()?;
    train.validate()?;
    if corpus.lines.iter().all(|l| l.is_empty()) {
        return Err(Error::Input("empty pretraining corpus".into()));
    }
    if vocab.len() > model.vocab_size {
        return Err(Error::Index(format!(
            "vocabulary of {} exceeds model vocab_size {}",
            vocab.len(),
            model.vocab_size
        )));
    }
    let seqs: Vec<Vec<usize>> = corpus
        .lines
        .iter()
        .filter(|l| !l.is_empty())
        .map(|l| {
            let mut s = Vec::with_capacity(l.len().min(model.max_len - 2) + 2);
            s.push(special::CLS);
            s.extend_from_slice(&l[..l.len().min(model.max_len - 2)]);
            s.push(special::SEP);
            s
        })
        .collect();

    let root = RngState::new(train.seed);
    let mut params = init_params(model, &root)?;
    let mut state = OptimState::new(&params);
    let mut batches = Batcher::new(seqs.len(), train.batch_size, root.split_named("batches"));
    let mut mask_rng = root.split_named("mask");
    let mut drop_rng = root.split_named("dropout");
    let mut curve = LossCurve::default();
    let mut window = Window::default();

    for step in 0..train.total_steps {
        let idx = batches.next();
        let refs: Vec<&[usize]> = idx.iter().map(|&i| seqs[i].as_slice()).collect();
        let batch = Batch::from_sequences(&refs, Labels::None)?;
        let batch = mask_tokens(&batch, train.mask_ratio, model.vocab_size, &mut mask_rng);
        let any = batch
            .mlm_targets
            .as_ref()
            .is_some_and(|t| t.iter().any(Option::is_some));
        if any {
            let (loss, grads) =
                loss_and_grads(&params, model, &batch, Objective::Mlm, &mut drop_rng)?;
            check_loss(loss, step + 1)?;
            if step == 0 {
                curve.push_loss(0, loss)?;
            }
            window.add(loss);
            adam_step(&mut params, &grads, &mut state, train)?;
        } else {
            state.t += 1;
        }
        if (step + 1) % train.log_every == 0 || step + 1 == train.total_steps {
            if let Some(m) = window.take() {
                curve.push_loss(step + 1, m)?;
            }
        }
    }

    let provenance = json!({
        "stage": "pretrain",
        "objective": "mlm",
        "seed": train.seed,
        "steps": train.total_steps,
        "corpus_lines": seqs.len(),
        "train_config": train,
    });
    Ok(PretrainOutcome {
        params,
        manifest: CheckpointManifest::new(model.clone(), vocab.hash(), provenance),
        curve,
    })
}

/// Training, validation and test splits for [`finetune`]. The caller is
/// responsible for keeping them disjoint.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: LabeledDataset,
    pub valid: Option<LabeledDataset>,
    pub test: Option<LabeledDataset>,
}

/// Result of [`finetune`].
#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    /// Selected parameters (final or best-valid).
    pub params: Parameters,
    pub manifest: CheckpointManifest,
    pub curve: LossCurve,
    /// Step whose parameters were selected.
    pub selected_step: u64,
    /// Training examples actually used after subsetting.
    pub train_examples: usize,
    /// Scores of the selected parameters on the validation split.
    pub valid_reports: Vec<MetricReport>,
    /// Scores of the selected parameters on the test split.
    pub test_reports: Vec<MetricReport>,
}

/// Metrics reported for a label kind; the first one drives best-valid
/// selection.
pub fn metrics_for(kind: LabelKind) -> Vec<MetricKind> {
    match kind {
        LabelKind::Classes(2) => vec![MetricKind::Accuracy, MetricKind::F1, MetricKind::Mcc],
        LabelKind::Classes(_) => vec![MetricKind::Accuracy],
        LabelKind::Scalar => vec![MetricKind::Spearman],
    }
}

/// Deterministic training subset of `round(n * fraction)` examples (at
/// least one), returned in ascending index order.
///
/// Classification data is stratified: each class is shuffled on its own
/// and contributes a prefix, with the per-class quotas rounded by largest
/// remainder (ties to the lower class id).
pub fn subset_indices(data: &LabeledDataset, fraction: f64, rng: &RngState) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "subset_fraction {fraction} not in (0, 1]"
        )));
    }
    let n = data.len();
    if n == 0 {
        return Err(Error::Input("empty training split".into()));
    }
    let target = ((n as f64 * fraction).round() as usize).clamp(1, n);
    let mut rng = rng.split_named("subset");
    let mut out = match data.label_kind {
        LabelKind::Scalar => {
            let mut order = rng.permutation(n);
            order.truncate(target);
            order
        }
        LabelKind::Classes(k) => {
            let mut groups = vec![Vec::new(); k];
            for (i, e) in data.examples.iter().enumerate() {
                match e.label {
                    Label::Class(c) if c < k => groups[c].push(i),
                    other => {
                        return Err(Error::Input(format!("label {other:?} outside {k} classes")))
                    }
                }
            }
            let exact: Vec<f64> = groups
                .iter()
                .map(|g| g.len() as f64 * target as f64 / n as f64)
                .collect();
            let mut quota: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
            let mut by_rem: Vec<usize> = (0..k).collect();
            by_rem.sort_by(|&a, &b| {
                (exact[b] - exact[b].floor())
                    .total_cmp(&(exact[a] - exact[a].floor()))
                    .then(a.cmp(&b))
            });
            let mut left = target - quota.iter().sum::<usize>();
            for c in by_rem.into_iter().cycle() {
                if left == 0 {
                    break;
                }
                if quota[c] < groups[c].len() {
                    quota[c] += 1;
                    left -= 1;
                }
            }
            let mut out = Vec::with_capacity(target);
            for (g, q) in groups.iter_mut().zip(quota) {
                rng.shuffle(g);
                out.extend_from_slice(&g[..q]);
            }
            out
        }
    };
    out.sort_unstable();
    Ok(out)
}

fn labels_of(data: &LabeledDataset, idx: &[usize]) -> Result<Labels> {
    match data.label_kind {
        LabelKind::Classes(_) => idx
            .iter()
            .map(|&i| match data.examples[i].label {
                Label::Class(c) => Ok(c),
                Label::Scalar(_) => Err(Error::Input("scalar label in a class dataset".into())),
            })
            .collect::<Result<_>>()
            .map(Labels::Classes),
        LabelKind::Scalar => idx
            .iter()
            .map(|&i| match data.examples[i].label {
                Label::Scalar(x) => Ok(x),
                Label::Class(c) => Ok(c as f64),
            })
            .collect::<Result<_>>()
            .map(Labels::Scalars),
    }
}

fn head_for(kind: LabelKind) -> Head {
    match kind {
        LabelKind::Classes(n) => Head::Classes(n),
        LabelKind::Scalar => Head::Regression,
    }
}

/// Eval-mode predictions for every example, batched; batches run
/// concurrently and are gathered in order.
pub fn predict(
    params: &Parameters,
    model: &ModelConfig,
    data: &LabeledDataset,
    batch_size: usize,
) -> Result<Predictions> {
    let n_batches = data.len().div_ceil(batch_size.max(1));
    let chunks = par::map_indices(n_batches, |b| -> Result<Vec<f64>> {
        let lo = b * batch_size;
        let hi = (lo + batch_size).min(data.len());
        let refs: Vec<&[usize]> = data.examples[lo..hi]
            .iter()
            .map(|e| e.ids.as_slice())
            .collect();
        let batch = Batch::from_sequences(&refs, Labels::None)?;
        let out = forward(params, model, &batch, Mode::Cls, false)?;
        let (rows, cols) = out.logits.dims2()?;
        Ok((0..rows)
            .map(|r| match model.head {
                Head::Regression => out.logits.get2(r, 0),
                Head::Classes(_) => {
                    let row = out.logits.row(r);
                    // First maximum wins.
                    (0..cols).fold(0, |best, j| if row[j] > row[best] { j } else { best }) as f64
                }
            })
            .collect())
    });
    let mut flat = Vec::with_capacity(data.len());
    for c in chunks {
        flat.extend(c?);
    }
    Ok(match model.head {
        Head::Regression => Predictions::Scalars(flat),
        Head::Classes(_) => Predictions::Classes(flat.into_iter().map(|x| x as usize).collect()),
    })
}

/// Scores `params` on `data` with every metric of its label kind.
pub fn score(
    params: &Parameters,
    model: &ModelConfig,
    data: &LabeledDataset,
    train: &TrainConfig,
) -> Result<Vec<MetricReport>> {
    let preds = predict(params, model, data, train.batch_size)?;
    let labels: Vec<Label> = data.examples.iter().map(|e| e.label).collect();
    metrics_for(data.label_kind)
        .into_iter()
        .map(|m| evaluate(&preds, &labels, m, train.seed, train.init_mode))
        .collect()
}

/// Primary validation score; an undefined correlation ranks lowest.
fn primary_score(
    params: &Parameters,
    model: &ModelConfig,
    data: &LabeledDataset,
    train: &TrainConfig,
) -> Result<f64> {
    let preds = predict(params, model, data, train.batch_size)?;
    let labels: Vec<Label> = data.examples.iter().map(|e| e.label).collect();
    match evaluate(
        &preds,
        &labels,
        metrics_for(data.label_kind)[0],
        train.seed,
        train.init_mode,
    ) {
        Ok(r) => Ok(r.value),
        Err(Error::UndefinedCorrelation(_)) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}

/// Fine-tunes a sequence classifier or regressor.
///
/// The head is taken from the training split's label kind, overriding
/// `model.head`. In every mode the classifier head is freshly sampled; in
/// scratch mode `checkpoint` is ignored. Reported scores follow
/// `train.checkpoint_selection`; best-valid keeps the earliest best step.
pub fn finetune(
    splits: &Splits,
    checkpoint: Option<(&Parameters, &CheckpointManifest)>,
    model: &ModelConfig,
    train: &TrainConfig,
) -> Result<FinetuneOutcome> {
    train.validate()?;
    let kind = splits.train.label_kind;
    let model = ModelConfig {
        head: head_for(kind),
        ..model.clone()
    };
    model.validate()?;
    for d in [
        Some(&splits.train),
        splits.valid.as_ref(),
        splits.test.as_ref(),
    ]
    .into_iter()
    .flatten()
    {
        d.validate()?;
        if d.label_kind != kind {
            return Err(Error::Input("splits disagree on label kind".into()));
        }
        if d.vocab_size > model.vocab_size {
            return Err(Error::Index(format!(
                "dataset vocabulary of {} exceeds model vocab_size {}",
                d.vocab_size, model.vocab_size
            )));
        }
    }
    let best_valid = train.checkpoint_selection == CheckpointSelection::BestValid;
    if best_valid && splits.valid.is_none() {
        return Err(Error::Config(
            "best-valid selection needs a validation split".into(),
        ));
    }

    let root = RngState::new(train.seed);
    let (mut params, parent) = match (train.init_mode, checkpoint) {
        (InitMode::Scratch, _) => (init_params(&model, &root)?, None),
        (mode, Some((p, m))) => {
            m.check_compatible(&model)?;
            let p = if mode == InitMode::ReEmb {
                re_embed(p, &root, train.reembed_positional)
            } else {
                p.clone()
            };
            (p, Some(m))
        }
        (mode, None) => {
            return Err(Error::Compatibility(format!(
                "init mode {mode} needs a checkpoint"
            )))
        }
    };
    params.reset_classifier(model.head.outputs(), &mut root.split_named("classifier"));

    let subset = subset_indices(&splits.train, train.subset_fraction, &root)?;
    let mut state = OptimState::new(&params);
    let mut batches = Batcher::new(subset.len(), train.batch_size, root.split_named("batches"));
    let mut drop_rng = root.split_named("dropout");
    let mut curve = LossCurve::default();
    let mut window = Window::default();
    let mut best: Option<(f64, u64, Parameters)> = None;

    for step in 0..train.total_steps {
        let idx: Vec<usize> = batches.next().into_iter().map(|i| subset[i]).collect();
        let refs: Vec<&[usize]> = idx
            .iter()
            .map(|&i| splits.train.examples[i].ids.as_slice())
            .collect();
        let batch = Batch::from_sequences(&refs, labels_of(&splits.train, &idx)?)?;
        let (loss, grads) = loss_and_grads(
            &params,
            &model,
            &batch,
            Objective::Cls(&model.head),
            &mut drop_rng,
        )?;
        check_loss(loss, step + 1)?;
        if step == 0 {
            curve.push_loss(0, loss)?;
        }
        window.add(loss);
        adam_step(&mut params, &grads, &mut state, train)?;
        let done = step + 1;
        if done % train.log_every == 0 || done == train.total_steps {
            if let Some(m) = window.take() {
                curve.push_loss(done, m)?;
            }
        }
        let eval_now =
            (train.eval_every > 0 && done % train.eval_every == 0) || done == train.total_steps;
        if let (true, Some(valid)) = (eval_now, splits.valid.as_ref()) {
            let s = primary_score(&params, &model, valid, train)?;
            curve.push_valid(done, s)?;
            if best_valid && best.as_ref().is_none_or(|b| s > b.0) {
                best = Some((s, done, params.clone()));
            }
        }
    }

    let (params, selected_step) = match best {
        Some((_, step, p)) => (p, step),
        None => (params, train.total_steps),
    };
    let valid_reports = match &splits.valid {
        Some(v) => score(&params, &model, v, train)?,
        None => Vec::new(),
    };
    let test_reports = match &splits.test {
        Some(t) => score(&params, &model, t, train)?,
        None => Vec::new(),
    };
    let provenance = json!({
        "stage": "finetune",
        "init_mode": train.init_mode,
        "seed": train.seed,
        "steps": train.total_steps,
        "selected_step": selected_step,
        "train_examples": subset.len(),
        "parent": parent.map(|m| &m.provenance),
        "train_config": train,
    });
    let vocab_hash = parent.map(|m| m.vocab_hash.clone()).unwrap_or_default();
    Ok(FinetuneOutcome {
        params,
        manifest: CheckpointManifest::new(model, vocab_hash, provenance),
        curve,
        selected_step,
        train_examples: subset.len(),
        valid_reports,
        test_reports,
    })
}
