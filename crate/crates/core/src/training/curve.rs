use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Training loss (and optional validation score) against step.
///
/// A loss point at step `s > 0` is the mean batch loss over the updates
/// since the previous point; the point at step 0, when present, is the loss
/// of the first batch before any update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub loss: Vec<(u64, f64)>,
    pub valid: Vec<(u64, f64)>,
}

impl LossCurve {
    pub fn push_loss(&mut self, step: u64, loss: f64) -> Result<()> {
        push(&mut self.loss, step, loss)
    }

    pub fn push_valid(&mut self, step: u64, score: f64) -> Result<()> {
        push(&mut self.valid, step, score)
    }

    pub fn loss_at(&self, step: u64) -> Option<f64> {
        self.loss.iter().find(|(s, _)| *s == step).map(|p| p.1)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.loss.last().map(|p| p.1)
    }

    /// `step,loss` rows with a header.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "step,loss")?;
        for (s, l) in &self.loss {
            writeln!(out, "{s},{l}")?;
        }
        Ok(())
    }

    /// `step,score` rows with a header.
    pub fn write_valid_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "step,score")?;
        for (s, v) in &self.valid {
            writeln!(out, "{s},{v}")?;
        }
        Ok(())
    }
}

fn push(v: &mut Vec<(u64, f64)>, step: u64, x: f64) -> Result<()> {
    if let Some(&(last, _)) = v.last() {
        if step <= last {
            return Err(Error::Contract(format!("curve step {step} after {last}")));
        }
    }
    v.push((step, x));
    Ok(())
}

/// Running mean over one logging window.
#[derive(Debug, Default)]
pub(crate) struct Window {
    sum: f64,
    n: usize,
}

impl Window {
    pub fn add(&mut self, x: f64) {
        self.sum += x;
        self.n += 1;
    }

    pub fn take(&mut self) -> Option<f64> {
        let out = (self.n > 0).then(|| self.sum / self.n as f64);
        *self = Window::default();
        out
    }
}
