use serde::{Deserialize, Serialize};

use crate::corpora::{Example, Label, LabelKind, LabeledDataset, Vocab};
use crate::model::special;
use crate::numerics::RngState;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusKind {
    Uniform,
    Flat,
    Nesting,
    MotifTask,
}

impl std::str::FromStr for CorpusKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "flat" => Ok(Self::Flat),
            "nesting" => Ok(Self::Nesting),
            "motif-task" | "motif" => Ok(Self::MotifTask),
            other => Err(Error::Spec(format!("unknown corpus kind {other}"))),
        }
    }
}

/// Generator parameters. Line lengths count content tokens only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub kind: CorpusKind,
    pub vocab_size: usize,
    /// Trailing content ids marked unused; generators never emit them.
    pub unused: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub lines: usize,
    /// Number of bracket types `k`; type `j` opens with content id
    /// `5 + 2j` and closes with `6 + 2j`.
    pub bracket_types: usize,
    /// Probability `q` of closing the top bracket when both moves are legal.
    pub close_prob: f64,
    /// Motif-task alphabet (source vocabulary content tokens).
    pub alphabet: Vec<String>,
    pub motif_len: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            kind: CorpusKind::Nesting,
            vocab_size: 64,
            unused: 0,
            min_len: 8,
            max_len: 32,
            lines: 1000,
            bracket_types: 10,
            close_prob: 0.4,
            alphabet: ["A", "C", "G", "T"].map(String::from).to_vec(),
            motif_len: 6,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    fn check_lengths(&self) -> Result<()> {
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Spec(format!(
                "invalid length range {}..={}",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }

    pub fn vocab(&self) -> Result<Vocab> {
        Vocab::synthetic(self.vocab_size, self.unused)
    }
}

/// Token-id lines without CLS/SEP.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub lines: Vec<Vec<usize>>,
}

/// Lines of i.i.d. uniform content tokens (unused ids excluded).
pub fn gen_uniform(spec: &CorpusSpec) -> Result<Corpus> {
    if spec.kind != CorpusKind::Uniform {
        return Err(Error::Spec("gen_uniform needs kind uniform".into()));
    }
    spec.check_lengths()?;
    let ids = spec.vocab()?.active_content_ids();
    let mut rng = RngState::new(spec.seed).split_named("uniform");
    let lines = (0..spec.lines)
        .map(|_| {
            let n = rng.range_inclusive(spec.min_len, spec.max_len);
            (0..n).map(|_| ids[rng.below(ids.len())]).collect()
        })
        .collect();
    Ok(Corpus { lines })
}

/// Random Dyck words over `k` bracket types (nesting) or concatenations of
/// matched pairs (flat).
pub fn gen_parens(spec: &CorpusSpec) -> Result<Corpus> {
    let depth_cap = match spec.kind {
        CorpusKind::Nesting => usize::MAX,
        CorpusKind::Flat => 1,
        _ => return Err(Error::Spec("gen_parens needs kind flat or nesting".into())),
    };
    spec.check_lengths()?;
    if spec.min_len % 2 == 1 || spec.max_len % 2 == 1 {
        return Err(Error::Spec(format!(
            "bracket lines need even lengths, got {}..={}",
            spec.min_len, spec.max_len
        )));
    }
    if spec.bracket_types == 0 {
        return Err(Error::Spec("need at least one bracket type".into()));
    }
    let vocab = spec.vocab()?;
    let top = special::FIRST_CONTENT + 2 * spec.bracket_types;
    if top > vocab.len() || vocab.unused().range(..top).next().is_some() {
        return Err(Error::Spec(format!(
            "{} bracket types need active ids up to {top}",
            spec.bracket_types
        )));
    }
    if !(0.0..=1.0).contains(&spec.close_prob) {
        return Err(Error::Spec("close_prob must lie in [0, 1]".into()));
    }
    let mut rng = RngState::new(spec.seed).split_named("parens");
    let lines = (0..spec.lines)
        .map(|_| {
            let n = 2 * rng.range_inclusive(spec.min_len / 2, spec.max_len / 2);
            dyck_line(n, spec.bracket_types, spec.close_prob, depth_cap, &mut rng)
        })
        .collect();
    Ok(Corpus { lines })
}

fn dyck_line(n: usize, k: usize, q: f64, depth_cap: usize, rng: &mut RngState) -> Vec<usize> {
    let mut stack: Vec<usize> = Vec::new();
    let mut out = Vec::with_capacity(n);
    for step in 0..n {
        let remaining = n - step;
        let close = if stack.is_empty() {
            false
        } else if stack.len() == remaining || stack.len() >= depth_cap {
            true
        } else {
            rng.bernoulli(q)
        };
        if close {
            let t = stack.pop().unwrap();
            out.push(special::FIRST_CONTENT + 2 * t + 1);
        } else {
            let t = rng.below(k);
            stack.push(t);
            out.push(special::FIRST_CONTENT + 2 * t);
        }
    }
    out
}

/// Maximum nesting depth of a bracket line; any id with odd offset from
/// the first content id is a closer.
pub fn max_depth(line: &[usize]) -> usize {
    let (mut d, mut best) = (0usize, 0usize);
    for &id in line {
        if (id - special::FIRST_CONTENT).is_multiple_of(2) {
            d += 1;
            best = best.max(d);
        } else {
            d = d.saturating_sub(1);
        }
    }
    best
}

/// Balanced binary motif-detection task over a small alphabet.
#[derive(Clone, Debug)]
pub struct MotifTask {
    /// Source vocabulary: specials plus the alphabet.
    pub vocab: Vocab,
    pub motif: Vec<usize>,
    pub dataset: LabeledDataset,
}

fn contains(hay: &[usize], needle: &[usize]) -> bool {
    hay.windows(needle.len()).any(|w| w == needle)
}

/// `floor(n/2)` positives (label 1) carrying the motif at a random offset
/// and `ceil(n/2)` rejection-sampled negatives (label 0) that never contain
/// it, shuffled. Sequences are wrapped in CLS/SEP.
pub fn gen_motif_task(spec: &CorpusSpec) -> Result<MotifTask> {
    if spec.kind != CorpusKind::MotifTask {
        return Err(Error::Spec("gen_motif_task needs kind motif-task".into()));
    }
    spec.check_lengths()?;
    let a = spec.alphabet.len();
    if a < 4 {
        return Err(Error::Spec(format!(
            "alphabet of {a} symbols, need at least 4"
        )));
    }
    if spec.motif_len == 0 || spec.motif_len >= spec.min_len {
        return Err(Error::Spec(format!(
            "motif length {} must be in 1..{}",
            spec.motif_len, spec.min_len
        )));
    }
    // Chance a uniform background of the longest length avoids the motif.
    let windows = (spec.max_len - spec.motif_len + 1) as f64;
    let accept = (1.0 - (a as f64).powi(-(spec.motif_len as i32))).powf(windows);
    if accept < 1e-3 {
        return Err(Error::Spec(format!(
            "motif of length {} over {a} symbols is too common for rejection sampling (acceptance {accept:.2e})",
            spec.motif_len
        )));
    }
    let vocab = Vocab::with_content(&spec.alphabet)?;
    let root = RngState::new(spec.seed);
    let mut rng = root.split_named("motif");
    let sym = |r: &mut RngState| special::FIRST_CONTENT + r.below(a);
    let motif: Vec<usize> = (0..spec.motif_len).map(|_| sym(&mut rng)).collect();

    let n_pos = spec.lines / 2;
    let mut examples = Vec::with_capacity(spec.lines);
    for i in 0..spec.lines {
        let len = rng.range_inclusive(spec.min_len, spec.max_len);
        let positive = i < n_pos;
        let body = if positive {
            let mut s: Vec<usize> = (0..len).map(|_| sym(&mut rng)).collect();
            let at = rng.below(len - spec.motif_len + 1);
            s[at..at + spec.motif_len].copy_from_slice(&motif);
            s
        } else {
            let mut tries = 0;
            loop {
                let s: Vec<usize> = (0..len).map(|_| sym(&mut rng)).collect();
                if !contains(&s, &motif) {
                    break s;
                }
                tries += 1;
                if tries >= 10_000 {
                    return Err(Error::Spec("rejection sampling exhausted".into()));
                }
            }
        };
        let mut ids = Vec::with_capacity(len + 2);
        ids.push(special::CLS);
        ids.extend(body);
        ids.push(special::SEP);
        examples.push(Example {
            ids,
            label: Label::Class(usize::from(positive)),
        });
    }
    root.split_named("motif-order").shuffle(&mut examples);
    Ok(MotifTask {
        dataset: LabeledDataset {
            examples,
            label_kind: LabelKind::Classes(2),
            vocab_size: vocab.len(),
        },
        vocab,
        motif,
    })
}

/// One space-separated token line per corpus line.
pub fn write_corpus(corpus: &Corpus, vocab: &Vocab) -> Result<String> {
    let mut out = String::new();
    for line in &corpus.lines {
        let toks: Vec<&str> = line
            .iter()
            .map(|&id| {
                vocab
                    .token(id)
                    .ok_or_else(|| Error::Index(format!("id {id} outside vocab")))
            })
            .collect::<Result<_>>()?;
        out.push_str(&toks.join(" "));
        out.push('\n');
    }
    Ok(out)
}

/// Parses a corpus file; unknown tokens become UNK. Blank lines are skipped.
pub fn read_corpus(text: &str, vocab: &Vocab) -> Corpus {
    let lines = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_whitespace()
                .map(|t| vocab.id(t).unwrap_or(special::UNK))
                .collect()
        })
        .collect();
    Corpus { lines }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent validator: every closer matches the most recent open
    /// bracket of the same type and the depth returns to zero.
    fn valid_dyck(line: &[usize]) -> bool {
        let mut st = Vec::new();
        for &id in line {
            let off = id - special::FIRST_CONTENT;
            if off.is_multiple_of(2) {
                st.push(off / 2);
            } else if st.pop() != Some(off / 2) {
                return false;
            }
        }
        st.is_empty()
    }

    fn spec(kind: CorpusKind) -> CorpusSpec {
        CorpusSpec {
            kind,
            lines: 500,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn nesting_lines_are_dyck_words() {
        let c = gen_parens(&spec(CorpusKind::Nesting)).unwrap();
        assert_eq!(c.lines.len(), 500);
        assert!(c.lines.iter().all(|l| valid_dyck(l) && l.len() % 2 == 0));
        assert!(c.lines.iter().any(|l| max_depth(l) >= 3));
    }

    #[test]
    fn flat_lines_have_depth_one() {
        let c = gen_parens(&spec(CorpusKind::Flat)).unwrap();
        assert!(c.lines.iter().all(|l| valid_dyck(l) && max_depth(l) <= 1));
    }

    #[test]
    fn close_prob_one_alternates() {
        let s = CorpusSpec {
            close_prob: 1.0,
            min_len: 10,
            max_len: 10,
            ..spec(CorpusKind::Nesting)
        };
        for l in gen_parens(&s).unwrap().lines {
            assert_eq!(l.len(), 10);
            assert_eq!(max_depth(&l), 1);
            for pair in l.chunks(2) {
                assert_eq!(pair[1], pair[0] + 1);
            }
        }
    }

    #[test]
    fn odd_lengths_and_wrong_kind_rejected() {
        let s = CorpusSpec {
            min_len: 7,
            ..spec(CorpusKind::Nesting)
        };
        assert!(matches!(gen_parens(&s), Err(Error::Spec(_))));
        assert!(gen_parens(&spec(CorpusKind::Uniform)).is_err());
        let too_many = CorpusSpec {
            bracket_types: 40,
            ..spec(CorpusKind::Nesting)
        };
        assert!(gen_parens(&too_many).is_err());
    }

    #[test]
    fn uniform_avoids_specials_and_unused() {
        let s = CorpusSpec {
            unused: 10,
            ..spec(CorpusKind::Uniform)
        };
        let c = gen_uniform(&s).unwrap();
        for l in &c.lines {
            assert!((s.min_len..=s.max_len).contains(&l.len()));
            assert!(l.iter().all(|&i| (5..54).contains(&i)));
        }
    }

    #[test]
    fn generators_are_seed_deterministic() {
        let v = Vocab::synthetic(64, 0).unwrap();
        for kind in [CorpusKind::Uniform, CorpusKind::Nesting, CorpusKind::Flat] {
            let s = spec(kind);
            let gen = |s: &CorpusSpec| match kind {
                CorpusKind::Uniform => gen_uniform(s),
                _ => gen_parens(s),
            };
            let a = write_corpus(&gen(&s).unwrap(), &v).unwrap();
            let b = write_corpus(&gen(&s).unwrap(), &v).unwrap();
            assert_eq!(a, b);
            let other = CorpusSpec { seed: 4, ..s };
            assert_ne!(a, write_corpus(&gen(&other).unwrap(), &v).unwrap());
            assert_eq!(read_corpus(&a, &v), gen(&spec(kind)).unwrap());
        }
    }

    #[test]
    fn motif_task_construction() {
        let s = CorpusSpec {
            kind: CorpusKind::MotifTask,
            lines: 301,
            min_len: 12,
            max_len: 20,
            motif_len: 5,
            ..Default::default()
        };
        let t = gen_motif_task(&s).unwrap();
        let (mut pos, mut neg) = (0, 0);
        for e in &t.dataset.examples {
            let body = &e.ids[1..e.ids.len() - 1];
            assert_eq!(e.ids[0], special::CLS);
            match e.label {
                Label::Class(1) => {
                    pos += 1;
                    assert!(contains(body, &t.motif));
                }
                Label::Class(0) => {
                    neg += 1;
                    assert!(!contains(body, &t.motif));
                }
                _ => unreachable!(),
            }
        }
        assert_eq!((pos, neg), (150, 151));
    }

    #[test]
    fn motif_task_infeasible() {
        let s = CorpusSpec {
            kind: CorpusKind::MotifTask,
            min_len: 40,
            max_len: 60,
            motif_len: 1,
            ..Default::default()
        };
        assert!(matches!(gen_motif_task(&s), Err(Error::Spec(_))));
        let small = CorpusSpec {
            kind: CorpusKind::MotifTask,
            alphabet: vec!["A".into(), "B".into()],
            ..Default::default()
        };
        assert!(gen_motif_task(&small).is_err());
    }
}
