use serde::{Deserialize, Serialize};

use crate::model::special;
use crate::{Error, Result};

/// Output head of the fine-tuning model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Classes(usize),
    Regression,
}

impl Head {
    pub fn outputs(self) -> usize {
        match self {
            Head::Classes(n) => n,
            Head::Regression => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout_prob: f64,
    pub head: Head,
}

impl Default for ModelConfig {
    /// Desk-scale BERT shape.
    fn default() -> Self {
        Self {
            num_layers: 4,
            hidden_dim: 128,
            num_heads: 4,
            ffn_dim: 512,
            vocab_size: 64,
            max_len: 64,
            dropout_prob: 0.1,
            head: Head::Classes(2),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_layers == 0 || self.hidden_dim == 0 || self.ffn_dim == 0 {
            return fail("layers, hidden_dim and ffn_dim must be positive".into());
        }
        if self.num_heads == 0 || !self.hidden_dim.is_multiple_of(self.num_heads) {
            return fail(format!(
                "hidden_dim {} not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.vocab_size <= special::FIRST_CONTENT {
            return fail(format!(
                "vocab_size {} leaves no content tokens",
                self.vocab_size
            ));
        }
        if self.max_len < 2 {
            return fail("max_len must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return fail(format!("dropout_prob {} not in [0, 1)", self.dropout_prob));
        }
        if let Head::Classes(n) = self.head {
            if n < 1 {
                return fail("classification head needs at least one class".into());
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    /// Whether two configs describe the same encoder body (heads may differ).
    pub fn same_body(&self, other: &ModelConfig) -> bool {
        self.num_layers == other.num_layers
            && self.hidden_dim == other.hidden_dim
            && self.num_heads == other.num_heads
            && self.ffn_dim == other.ffn_dim
            && self.vocab_size == other.vocab_size
            && self.max_len == other.max_len
    }
}
