use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpora::Vocab;
use crate::model::special;
use crate::numerics::RngState;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Classes(usize),
    Scalar,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Label {
    Class(usize),
    Scalar(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    /// Model-ready ids, `CLS ... SEP`.
    pub ids: Vec<usize>,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub examples: Vec<Example>,
    pub label_kind: LabelKind,
    pub vocab_size: usize,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            ..self.clone_empty()
        }
    }

    fn clone_empty(&self) -> LabeledDataset {
        LabeledDataset {
            examples: Vec::new(),
            label_kind: self.label_kind,
            vocab_size: self.vocab_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.examples.iter().enumerate() {
            if e.ids.is_empty() {
                return Err(Error::Input(format!("example {i} is empty")));
            }
            if let Some(&bad) = e.ids.iter().find(|&&t| t >= self.vocab_size) {
                return Err(Error::Index(format!("example {i} has id {bad}")));
            }
            match (e.label, self.label_kind) {
                (Label::Class(c), LabelKind::Classes(n)) if c < n => {}
                (Label::Scalar(_), LabelKind::Scalar) => {}
                (l, k) => {
                    return Err(Error::Input(format!(
                        "example {i}: label {l:?} vs kind {k:?}"
                    )))
                }
            }
        }
        Ok(())
    }
}

/// Parse result with the counters that ingestion warns about.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub dataset: LabeledDataset,
    pub unknown_tokens: usize,
    pub truncated: usize,
}

/// Parses `label<TAB>tok tok ...` lines.
///
/// Tokens are looked up in `vocab` (unknown ones become UNK), truncated to
/// `max_len - 2` and wrapped as `CLS ... SEP`. For classification the class
/// count is the largest label plus one unless `kind` fixes it.
pub fn parse_dataset(
    text: &str,
    vocab: &Vocab,
    max_len: usize,
    kind: LabelKind,
) -> Result<LoadedDataset> {
    if max_len < 3 {
        return Err(Error::Spec(format!(
            "max_len {max_len} leaves no room for tokens"
        )));
    }
    let mut examples = Vec::new();
    let (mut unknown, mut truncated) = (0, 0);
    let mut max_class = 0;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (label, toks) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: lineno,
            msg: "missing TAB between label and tokens".into(),
        })?;
        let label = match kind {
            LabelKind::Classes(_) => {
                let c: usize = label.trim().parse().map_err(|_| Error::Label {
                    line: lineno,
                    msg: format!("{label:?} is not a class id"),
                })?;
                max_class = max_class.max(c);
                Label::Class(c)
            }
            LabelKind::Scalar => Label::Scalar(label.trim().parse().map_err(|_| Error::Label {
                line: lineno,
                msg: format!("{label:?} is not a number"),
            })?),
        };
        let mut ids: Vec<usize> = toks
            .split_whitespace()
            .map(|t| {
                vocab.id(t).unwrap_or_else(|| {
                    unknown += 1;
                    special::UNK
                })
            })
            .collect();
        if ids.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                msg: "no tokens".into(),
            });
        }
        if ids.len() > max_len - 2 {
            ids.truncate(max_len - 2);
            truncated += 1;
        }
        let mut wrapped = Vec::with_capacity(ids.len() + 2);
        wrapped.push(special::CLS);
        wrapped.extend(ids);
        wrapped.push(special::SEP);
        examples.push(Example {
            ids: wrapped,
            label,
        });
    }
    let label_kind = match kind {
        LabelKind::Classes(0) => LabelKind::Classes(max_class + 1),
        LabelKind::Classes(n) if max_class >= n && !examples.is_empty() => {
            return Err(Error::Label {
                line: 0,
                msg: format!("class {max_class} with {n} classes"),
            })
        }
        k => k,
    };
    Ok(LoadedDataset {
        dataset: LabeledDataset {
            examples,
            label_kind,
            vocab_size: vocab.len(),
        },
        unknown_tokens: unknown,
        truncated,
    })
}

pub fn load_dataset(
    path: impl AsRef<Path>,
    vocab: &Vocab,
    max_len: usize,
    kind: LabelKind,
) -> Result<LoadedDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, vocab, max_len, kind)
}

/// Inverse of [`parse_dataset`] for datasets whose examples are wrapped in
/// CLS/SEP.
pub fn format_dataset(data: &LabeledDataset, vocab: &Vocab) -> Result<String> {
    let mut out = String::new();
    for e in &data.examples {
        let body = match e.ids.as_slice() {
            [special::CLS, mid @ .., special::SEP] => mid,
            other => other,
        };
        let toks: Vec<&str> = body
            .iter()
            .map(|&id| {
                vocab
                    .token(id)
                    .ok_or_else(|| Error::Index(format!("id {id} outside vocab")))
            })
            .collect::<Result<_>>()?;
        match e.label {
            Label::Class(c) => out.push_str(&c.to_string()),
            Label::Scalar(x) => out.push_str(&x.to_string()),
        }
        out.push('\t');
        out.push_str(&toks.join(" "));
        out.push('\n');
    }
    Ok(out)
}

pub fn save_dataset(path: impl AsRef<Path>, data: &LabeledDataset, vocab: &Vocab) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_dataset(data, vocab)?).map_err(|e| Error::io(path, e))
}

/// Seeded shuffle, then `floor(n * valid)` validation and `floor(n * test)`
/// test examples; the remainder goes to training.
pub fn split_dataset(
    data: &LabeledDataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    let (tr, va, te) = fractions;
    if [tr, va, te].iter().any(|f| !(0.0..=1.0).contains(f)) || (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::Spec(format!(
            "split fractions {fractions:?} must be in [0,1] and sum to 1"
        )));
    }
    let n = data.len();
    let order = RngState::new(seed).split_named("split").permutation(n);
    let n_valid = (n as f64 * va).floor() as usize;
    let n_test = (n as f64 * te).floor() as usize;
    let n_train = n - n_valid - n_test;
    Ok((
        data.subset(&order[..n_train]),
        data.subset(&order[n_train..n_train + n_valid]),
        data.subset(&order[n_train + n_valid..]),
    ))
}

/// Consecutive non-overlapping chunks of `len`; the last may be shorter.
pub fn segment(seq: &[usize], len: usize) -> Result<Vec<Vec<usize>>> {
    if seq.is_empty() {
        return Err(Error::Input("cannot segment an empty sequence".into()));
    }
    if len == 0 {
        return Err(Error::Spec("segment length must be positive".into()));
    }
    Ok(seq.chunks(len).map(<[usize]>::to_vec).collect())
}

/// Majority class; ties go to the lowest class id.
pub fn vote(predictions: &[usize]) -> Result<usize> {
    let max = *predictions
        .iter()
        .max()
        .ok_or_else(|| Error::Input("no predictions to vote on".into()))?;
    let mut counts = vec![0usize; max + 1];
    for &p in predictions {
        counts[p] += 1;
    }
    let best = *counts.iter().max().unwrap();
    Ok(counts.iter().position(|&c| c == best).unwrap())
}
