mod common;

use common::{tiny_config, tiny_task};
use proptest::prelude::*;
use xfer_core::corpora::{
    gen_parens, gen_uniform, CorpusKind, CorpusSpec, Example, Label, LabelKind, LabeledDataset,
    Vocab,
};
use xfer_core::model::{special, write_checkpoint, Head};
use xfer_core::numerics::RngState;
use xfer_core::training::*;
use xfer_core::Error;

fn balanced(n: usize) -> LabeledDataset {
    LabeledDataset {
        examples: (0..n)
            .map(|i| Example {
                ids: vec![special::CLS, 5 + i % 7, special::SEP],
                label: Label::Class(usize::from(i % 4 == 0)),
            })
            .collect(),
        label_kind: LabelKind::Classes(2),
        vocab_size: 12,
    }
}

#[test]
fn one_percent_subset_of_ten_thousand() {
    let data = balanced(10_000);
    let rng = RngState::new(5);
    let idx = subset_indices(&data, 0.01, &rng).unwrap();
    assert_eq!(idx.len(), 100);
    let pos = idx
        .iter()
        .filter(|&&i| data.examples[i].label == Label::Class(1))
        .count();
    assert_eq!(pos, 25);
    assert!(idx.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(idx, subset_indices(&data, 0.01, &rng).unwrap());
    assert_eq!(subset_indices(&data, 1e-9, &rng).unwrap().len(), 1);
    assert_eq!(subset_indices(&data, 1.0, &rng).unwrap().len(), 10_000);
}

#[test]
fn untrained_loss_is_uniform_entropy() {
    let spec = CorpusSpec {
        kind: CorpusKind::Uniform,
        vocab_size: 24,
        lines: 200,
        min_len: 8,
        max_len: 16,
        ..Default::default()
    };
    let corpus = gen_uniform(&spec).unwrap();
    let vocab = Vocab::synthetic(24, 0).unwrap();
    let train = TrainConfig {
        total_steps: 1,
        ..Default::default()
    };
    let out = pretrain_mlm(&corpus, &vocab, &tiny_config(), &train).unwrap();
    let l0 = out.curve.loss_at(0).unwrap();
    let want = (24f64).ln();
    assert!((l0 - want).abs() < 0.1 * want, "{l0} vs {want}");
}

#[test]
fn pretraining_reduces_loss_and_is_deterministic() {
    let spec = CorpusSpec {
        kind: CorpusKind::Nesting,
        vocab_size: 24,
        lines: 2000,
        min_len: 8,
        max_len: 16,
        bracket_types: 4,
        seed: 3,
        ..Default::default()
    };
    let corpus = gen_parens(&spec).unwrap();
    let vocab = Vocab::synthetic(24, 0).unwrap();
    let train = TrainConfig {
        lr: 1e-3,
        total_steps: 300,
        batch_size: 16,
        log_every: 50,
        ..Default::default()
    };
    let a = pretrain_mlm(&corpus, &vocab, &tiny_config(), &train).unwrap();
    assert!(a.curve.loss_at(300).unwrap() < a.curve.loss_at(0).unwrap());
    assert_eq!(a.curve.loss.len(), 7);
    let b = pretrain_mlm(&corpus, &vocab, &tiny_config(), &train).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(
        write_checkpoint(&a.params, &a.manifest).unwrap(),
        write_checkpoint(&b.params, &b.manifest).unwrap()
    );
    assert_eq!(a.manifest.vocab_hash, vocab.hash());
}

#[test]
fn empty_corpus_rejected() {
    let vocab = Vocab::synthetic(24, 0).unwrap();
    let train = TrainConfig {
        total_steps: 1,
        ..Default::default()
    };
    let err = pretrain_mlm(&Default::default(), &vocab, &tiny_config(), &train).unwrap_err();
    assert!(matches!(err, Error::Input(_)));
}

fn splits(seed: u64) -> Splits {
    let data = tiny_task(400, seed);
    let (train, valid, test) =
        xfer_core::corpora::split_dataset(&data, (0.8, 0.1, 0.1), seed).unwrap();
    Splits {
        train,
        valid: Some(valid),
        test: Some(test),
    }
}

#[test]
fn scratch_ignores_checkpoint() {
    let s = splits(1);
    let (p, c) = common::tiny_params(9);
    let manifest = xfer_core::model::CheckpointManifest::new(
        c.clone(),
        "",
        serde_json::json!({"stage": "pretrain"}),
    );
    let train = TrainConfig {
        lr: 1e-3,
        total_steps: 20,
        batch_size: 8,
        ..Default::default()
    };
    let with = finetune(&s, Some((&p, &manifest)), &c, &train).unwrap();
    let without = finetune(&s, None, &c, &train).unwrap();
    assert_eq!(with.params, without.params);
    assert_eq!(with.manifest.provenance["parent"], serde_json::Value::Null);
    assert_eq!(with.manifest.provenance["init_mode"], "scratch");
}

#[test]
fn checkpoint_modes_need_a_compatible_checkpoint() {
    let s = splits(2);
    let (p, c) = common::tiny_params(9);
    let manifest = xfer_core::model::CheckpointManifest::new(c.clone(), "", serde_json::json!({}));
    let train = TrainConfig {
        total_steps: 2,
        init_mode: InitMode::Checkpoint,
        ..Default::default()
    };
    assert!(matches!(
        finetune(&s, None, &c, &train),
        Err(Error::Compatibility(_))
    ));
    let wider = xfer_core::model::ModelConfig {
        hidden_dim: 32,
        ..c.clone()
    };
    assert!(matches!(
        finetune(&s, Some((&p, &manifest)), &wider, &train),
        Err(Error::Compatibility(_))
    ));
    let re = TrainConfig {
        init_mode: InitMode::ReEmb,
        ..train.clone()
    };
    let out = finetune(&s, Some((&p, &manifest)), &c, &re).unwrap();
    assert_eq!(out.params.layers[0].ffn_ln_gain.data().len(), 16);
}

#[test]
fn classifier_head_is_fresh_in_every_mode() {
    let s = splits(3);
    let (p, c) = common::tiny_params(4);
    let manifest = xfer_core::model::CheckpointManifest::new(c.clone(), "", serde_json::json!({}));
    // One step at a vanishing learning rate barely moves anything.
    let train = TrainConfig {
        lr: 1e-300,
        total_steps: 1,
        init_mode: InitMode::Checkpoint,
        ..Default::default()
    };
    let out = finetune(&s, Some((&p, &manifest)), &c, &train).unwrap();
    assert_ne!(out.params.globals.cls_w, p.globals.cls_w);
    assert_eq!(out.params.layers[1].key_w, p.layers[1].key_w);
}

#[test]
fn finetuning_learns_a_tiny_task() {
    let s = splits(4);
    let train = TrainConfig {
        lr: 2e-3,
        total_steps: 400,
        batch_size: 16,
        eval_every: 100,
        checkpoint_selection: CheckpointSelection::BestValid,
        ..Default::default()
    };
    let out = finetune(&s, None, &tiny_config(), &train).unwrap();
    let first = out.curve.loss_at(0).unwrap();
    assert!(out.curve.last_loss().unwrap() < first);
    assert_eq!(out.curve.valid.len(), 4);
    let best = out.curve.valid.iter().map(|v| v.1).fold(f64::MIN, f64::max);
    let first_best = out.curve.valid.iter().find(|v| v.1 == best).unwrap().0;
    assert_eq!(out.selected_step, first_best);
    assert_eq!(out.valid_reports[0].value, best);
    let kinds: Vec<_> = out.test_reports.iter().map(|r| r.metric).collect();
    assert_eq!(
        kinds,
        vec![MetricKind::Accuracy, MetricKind::F1, MetricKind::Mcc]
    );
    assert_eq!(out.manifest.config.head, Head::Classes(2));
}

#[test]
fn best_valid_needs_valid_split() {
    let mut s = splits(5);
    s.valid = None;
    let train = TrainConfig {
        total_steps: 2,
        checkpoint_selection: CheckpointSelection::BestValid,
        ..Default::default()
    };
    assert!(matches!(
        finetune(&s, None, &tiny_config(), &train),
        Err(Error::Config(_))
    ));
}

#[test]
fn regression_head_reports_spearman() {
    let mut data = tiny_task(200, 6);
    data.label_kind = LabelKind::Scalar;
    for (i, e) in data.examples.iter_mut().enumerate() {
        e.label = Label::Scalar(e.ids.len() as f64 + (i % 3) as f64 * 0.1);
    }
    let (train, valid, test) =
        xfer_core::corpora::split_dataset(&data, (0.8, 0.1, 0.1), 0).unwrap();
    let s = Splits {
        train,
        valid: Some(valid),
        test: Some(test),
    };
    let t = TrainConfig {
        lr: 1e-3,
        total_steps: 30,
        batch_size: 8,
        ..Default::default()
    };
    let out = finetune(&s, None, &tiny_config(), &t).unwrap();
    assert_eq!(out.manifest.config.head, Head::Regression);
    assert_eq!(out.test_reports[0].metric, MetricKind::Spearman);
    assert!((-1.0..=1.0).contains(&out.test_reports[0].value));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_are_permutation_equivariant(
        pairs in prop::collection::vec((0usize..2, 0usize..2, -5.0f64..5.0, -5.0f64..5.0), 3..40),
        seed in 0u64..1000,
    ) {
        let perm = RngState::new(seed).permutation(pairs.len());
        let shuffled: Vec<_> = perm.iter().map(|&i| pairs[i]).collect();
        let cols = |v: &[(usize, usize, f64, f64)]| {
            (v.iter().map(|p| p.0).collect::<Vec<_>>(), v.iter().map(|p| p.1).collect::<Vec<_>>(),
             v.iter().map(|p| p.2).collect::<Vec<_>>(), v.iter().map(|p| p.3).collect::<Vec<_>>())
        };
        let (p, g, x, y) = cols(&pairs);
        let (p2, g2, x2, y2) = cols(&shuffled);
        prop_assert_eq!(confusion(&p, &g).unwrap(), confusion(&p2, &g2).unwrap());
        prop_assert_eq!(mcc(&p, &g).unwrap(), mcc(&p2, &g2).unwrap());
        prop_assert_eq!(f1(&p, &g).unwrap(), f1(&p2, &g2).unwrap());
        let acc = accuracy(&p, &g).unwrap();
        prop_assert!((acc - accuracy(&p2, &g2).unwrap()).abs() < 1e-15);
        match (spearman(&x, &y), spearman(&x2, &y2)) {
            (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "spearman definedness changed under permutation"),
        }
    }

    #[test]
    fn adam_zero_gradient_is_exact_noop(seed in 0u64..50) {
        let (p, _) = common::tiny_params(seed);
        let mut q = p.clone();
        let mut st = OptimState::new(&p);
        let z = p.map(|_, t| xfer_core::numerics::Tensor::zeros(t.shape()));
        let c = TrainConfig { lr: 0.1, total_steps: 5, ..Default::default() };
        adam_step(&mut q, &z, &mut st, &c).unwrap();
        prop_assert_eq!(q, p);
    }
}
