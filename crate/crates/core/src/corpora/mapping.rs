use std::collections::BTreeSet;

use crate::corpora::{Corpus, LabeledDataset, Vocab};
use crate::model::special;
use crate::numerics::RngState;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MappingKind {
    Shift,
    Random,
    File,
    Inject,
}

/// Deterministic token-id map `table[src] = dst`.
///
/// Bijective kinds permute the content ids of one vocabulary and fix the
/// reserved ids. An injection sends a small source vocabulary into a model
/// vocabulary; its reserved ids map to the same reserved ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mapping {
    pub kind: MappingKind,
    table: Vec<usize>,
    codomain: usize,
}

impl Mapping {
    pub fn identity(size: usize) -> Self {
        Self {
            kind: MappingKind::File,
            table: (0..size).collect(),
            codomain: size,
        }
    }

    pub fn from_table(kind: MappingKind, table: Vec<usize>, codomain: usize) -> Result<Self> {
        if let Some(&bad) = table.iter().find(|&&d| d >= codomain) {
            return Err(Error::Mapping(format!(
                "image {bad} outside codomain {codomain}"
            )));
        }
        Ok(Self {
            kind,
            table,
            codomain,
        })
    }

    pub fn table(&self) -> &[usize] {
        &self.table
    }

    pub fn domain_size(&self) -> usize {
        self.table.len()
    }

    pub fn codomain_size(&self) -> usize {
        self.codomain
    }

    pub fn get(&self, id: usize) -> Result<usize> {
        self.table.get(id).copied().ok_or_else(|| {
            Error::Mapping(format!(
                "id {id} outside mapping domain {}",
                self.table.len()
            ))
        })
    }

    pub fn is_injective(&self) -> bool {
        let image: BTreeSet<_> = self.table.iter().collect();
        image.len() == self.table.len()
    }

    pub fn is_bijective(&self) -> bool {
        self.table.len() == self.codomain && self.is_injective()
    }

    pub fn inverse(&self) -> Result<Mapping> {
        if !self.is_bijective() {
            return Err(Error::Mapping("only bijections have an inverse".into()));
        }
        let mut inv = vec![0; self.table.len()];
        for (s, &d) in self.table.iter().enumerate() {
            inv[d] = s;
        }
        Ok(Mapping {
            kind: self.kind,
            table: inv,
            codomain: self.codomain,
        })
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn after(&self, first: &Mapping) -> Result<Mapping> {
        let table = first
            .table
            .iter()
            .map(|&m| self.get(m))
            .collect::<Result<_>>()?;
        Ok(Mapping {
            kind: MappingKind::File,
            table,
            codomain: self.codomain,
        })
    }

    pub fn apply_ids(&self, ids: &[usize]) -> Result<Vec<usize>> {
        ids.iter().map(|&i| self.get(i)).collect()
    }

    /// Remaps every token; labels are untouched.
    pub fn apply_dataset(&self, data: &LabeledDataset) -> Result<LabeledDataset> {
        let mut out = data.clone();
        for e in &mut out.examples {
            e.ids = self.apply_ids(&e.ids)?;
        }
        out.vocab_size = self.codomain;
        Ok(out)
    }

    pub fn apply_corpus(&self, corpus: &Corpus) -> Result<Corpus> {
        Ok(Corpus {
            lines: corpus
                .lines
                .iter()
                .map(|l| self.apply_ids(l))
                .collect::<Result<_>>()?,
        })
    }
}

/// Content-id permutation of `vocab`.
///
/// * `Shift`: content id `i` goes to `5 + (i - 5 + offset) mod (D - 5)`,
///   i.e. `(i + offset) mod D` taken on the cycle of content ids so the
///   reserved ids stay fixed.
/// * `Random`: uniformly random permutation of the content ids, seeded by
///   `offset_or_seed`.
pub fn make_mapping(kind: MappingKind, offset_or_seed: u64, vocab: &Vocab) -> Result<Mapping> {
    let d = vocab.len();
    let first = special::FIRST_CONTENT;
    let n = d - first;
    let mut table: Vec<usize> = (0..d).collect();
    match kind {
        MappingKind::Shift => {
            let off = (offset_or_seed % n as u64) as usize;
            for (i, slot) in table.iter_mut().enumerate().skip(first) {
                *slot = first + (i - first + off) % n;
            }
        }
        MappingKind::Random => {
            let mut rng = RngState::new(offset_or_seed).split_named("random-mapping");
            let perm = rng.permutation(n);
            for (i, p) in perm.into_iter().enumerate() {
                table[first + i] = first + p;
            }
        }
        MappingKind::File | MappingKind::Inject => {
            return Err(Error::Mapping(
                "file and inject mappings come from read_mapping / inject_tokens".into(),
            ))
        }
    }
    Mapping::from_table(kind, table, d)
}

/// Uniformly random injection of the source content ids into the model's
/// content ids. Reserved ids are never targets; the model's unused ids are
/// excluded when `avoid_unused` is set.
pub fn inject_tokens(
    source: &Vocab,
    model: &Vocab,
    seed: u64,
    avoid_unused: bool,
) -> Result<Mapping> {
    let eligible: Vec<usize> = if avoid_unused {
        model.active_content_ids()
    } else {
        model.content_ids().collect()
    };
    let need = source.len() - special::FIRST_CONTENT;
    if need > eligible.len() {
        return Err(Error::Capacity(format!(
            "{need} source tokens but only {} eligible model tokens",
            eligible.len()
        )));
    }
    let mut rng = RngState::new(seed).split_named("inject");
    let mut pool = eligible;
    // Partial Fisher-Yates: the first `need` slots are a uniform sample
    // without replacement, in random order.
    for i in 0..need {
        let j = i + rng.below(pool.len() - i);
        pool.swap(i, j);
    }
    let mut table: Vec<usize> = (0..special::FIRST_CONTENT).collect();
    table.extend_from_slice(&pool[..need]);
    Mapping::from_table(MappingKind::Inject, table, model.len())
}

/// `src<TAB>dst` lines covering the whole domain.
pub fn write_mapping(m: &Mapping) -> String {
    m.table
        .iter()
        .enumerate()
        .map(|(s, d)| format!("{s}\t{d}\n"))
        .collect()
}

fn parse_table(text: &str, domain: usize, codomain: usize) -> Result<Vec<usize>> {
    let mut table: Vec<usize> = (0..domain).collect();
    let mut seen = BTreeSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse = |s: Option<&str>| -> Result<usize> {
            s.and_then(|x| x.trim().parse().ok())
                .ok_or_else(|| Error::Parse {
                    line: lineno + 1,
                    msg: format!("expected src<TAB>dst, got {line:?}"),
                })
        };
        let mut parts = line.split('\t');
        let (s, d) = (parse(parts.next())?, parse(parts.next())?);
        if s >= domain || d >= codomain {
            return Err(Error::Mapping(format!(
                "line {}: {s} -> {d} outside {domain} -> {codomain}",
                lineno + 1
            )));
        }
        if !seen.insert(s) {
            return Err(Error::Mapping(format!(
                "line {}: source {s} listed twice",
                lineno + 1
            )));
        }
        table[s] = d;
    }
    Ok(table)
}

/// Parses a mapping file for a vocabulary of `size` ids. Ids not listed map
/// to themselves; the result must be a bijection.
pub fn read_mapping(text: &str, size: usize) -> Result<Mapping> {
    let table = parse_table(text, size, size)?;
    let m = Mapping::from_table(MappingKind::File, table, size)?;
    if !m.is_bijective() {
        return Err(Error::Mapping("mapping table is not bijective".into()));
    }
    Ok(m)
}

/// Parses an injection file from `domain` source ids into `codomain` model
/// ids. Unlisted ids map to themselves; the map must be injective.
pub fn read_injection(text: &str, domain: usize, codomain: usize) -> Result<Mapping> {
    if domain > codomain {
        return Err(Error::Capacity(format!(
            "{domain} source ids cannot inject into {codomain}"
        )));
    }
    let m = Mapping::from_table(
        MappingKind::Inject,
        parse_table(text, domain, codomain)?,
        codomain,
    )?;
    if !m.is_injective() {
        return Err(Error::Mapping("mapping table is not injective".into()));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_matches_direct_formula() {
        let v = Vocab::synthetic(30522, 0).unwrap();
        let m = make_mapping(MappingKind::Shift, 1000, &v).unwrap();
        assert_eq!(m.get(5).unwrap(), 1005);
        assert_eq!(m.get(2).unwrap(), 2);
        let inv = m.inverse().unwrap();
        assert_eq!(inv.get(m.get(30000).unwrap()).unwrap(), 30000);
        assert!(m.is_bijective());
    }

    #[test]
    fn random_is_bijection_fixing_reserved() {
        let v = Vocab::synthetic(200, 0).unwrap();
        let m = make_mapping(MappingKind::Random, 9, &v).unwrap();
        assert!(m.is_bijective());
        assert!((0..5).all(|i| m.get(i).unwrap() == i));
        assert_ne!(m, make_mapping(MappingKind::Random, 10, &v).unwrap());
    }

    #[test]
    fn injection_capacity_and_unused() {
        let src =
            Vocab::with_content(&(0..20).map(|i| format!("aa{i}")).collect::<Vec<_>>()).unwrap();
        let model = Vocab::synthetic(1000, 100).unwrap();
        let m = inject_tokens(&src, &model, 1, true).unwrap();
        let image: BTreeSet<usize> = m.table()[5..].iter().copied().collect();
        assert_eq!(image.len(), 20);
        assert!(image.iter().all(|i| *i >= 5 && !model.unused().contains(i)));

        // all but 20 content ids unused
        let tight = Vocab::synthetic(1000, 975).unwrap();
        let m = inject_tokens(&src, &tight, 1, false).unwrap();
        assert!(m.table()[5..].iter().all(|i| *i >= 5));
        assert!(matches!(
            inject_tokens(&src, &Vocab::synthetic(20, 0).unwrap(), 1, true),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn mapping_file_round_trip_and_validation() {
        let v = Vocab::synthetic(50, 0).unwrap();
        let m = make_mapping(MappingKind::Random, 2, &v).unwrap();
        let back = read_mapping(&write_mapping(&m), 50).unwrap();
        assert_eq!(back.table(), m.table());
        assert!(matches!(read_mapping("5\t6\n", 50), Err(Error::Mapping(_))));
        assert!(read_mapping("5\t6\n6\t5\n", 50).is_ok());
        assert!(matches!(
            read_mapping("5 6\n", 50),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            read_mapping("5\t60\n", 50),
            Err(Error::Mapping(_))
        ));
    }

    #[test]
    fn out_of_domain_id() {
        let m = Mapping::identity(10);
        assert!(matches!(m.apply_ids(&[3, 10]), Err(Error::Mapping(_))));
    }
}
