use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::model::special;
use crate::{Error, Result};

/// Ordered token list; the line number of a token in a vocab file is its id.
///
/// Ids 0-4 are the reserved specials. Tokens spelled `[unusedN]` form the
/// unused-id set.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    unused: BTreeSet<usize>,
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() <= special::FIRST_CONTENT {
            return Err(Error::Spec(format!(
                "vocab of {} tokens has no content tokens",
                tokens.len()
            )));
        }
        for (i, name) in special::NAMES.iter().enumerate() {
            if tokens[i] != *name {
                return Err(Error::Spec(format!(
                    "id {i} must be {name}, found {}",
                    tokens[i]
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Spec(format!("token {i} is empty or has whitespace")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Spec(format!("duplicate token {t}")));
            }
        }
        let unused = tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.starts_with("[unused"))
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            tokens,
            index,
            unused,
        })
    }

    /// Specials followed by `content`.
    pub fn with_content<S: AsRef<str>>(content: &[S]) -> Result<Self> {
        let tokens = special::NAMES
            .iter()
            .map(|s| s.to_string())
            .chain(content.iter().map(|s| s.as_ref().to_string()))
            .collect();
        Self::new(tokens)
    }

    /// `size` ids: specials, then `t5, t6, ...`, with the last `unused` ids
    /// spelled `[unused0], [unused1], ...`.
    pub fn synthetic(size: usize, unused: usize) -> Result<Self> {
        if size <= special::FIRST_CONTENT + unused {
            return Err(Error::Spec(format!(
                "vocab size {size} too small for {unused} unused ids"
            )));
        }
        let n_content = size - special::FIRST_CONTENT;
        let names: Vec<String> = (0..n_content)
            .map(|i| {
                let id = special::FIRST_CONTENT + i;
                if i >= n_content - unused {
                    format!("[unused{}]", i - (n_content - unused))
                } else {
                    format!("t{id}")
                }
            })
            .collect();
        Self::with_content(&names)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn unused(&self) -> &BTreeSet<usize> {
        &self.unused
    }

    /// Content ids (non-reserved), including unused ones.
    pub fn content_ids(&self) -> std::ops::Range<usize> {
        special::FIRST_CONTENT..self.tokens.len()
    }

    /// Content ids that are not in the unused set.
    pub fn active_content_ids(&self) -> Vec<usize> {
        self.content_ids()
            .filter(|i| !self.unused.contains(i))
            .collect()
    }

    /// Hex SHA-256 over the newline-joined tokens.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_file_string(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::new(text.lines().map(str::to_string).collect())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }
}
