use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How the encoder is initialized before fine-tuning.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    #[default]
    Scratch,
    Checkpoint,
    ReEmb,
}

impl InitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InitMode::Scratch => "scratch",
            InitMode::Checkpoint => "checkpoint",
            InitMode::ReEmb => "re-emb",
        }
    }
}

impl std::fmt::Display for InitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scratch" => Ok(InitMode::Scratch),
            "checkpoint" | "pretrained" => Ok(InitMode::Checkpoint),
            "re-emb" => Ok(InitMode::ReEmb),
            _ => Err(Error::Config(format!("unknown init mode {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointSelection {
    #[default]
    Final,
    BestValid,
}

impl std::str::FromStr for CheckpointSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final" => Ok(CheckpointSelection::Final),
            "best-valid" => Ok(CheckpointSelection::BestValid),
            _ => Err(Error::Config(format!("unknown checkpoint selection {s:?}"))),
        }
    }
}

/// Optimizer, schedule and run settings shared by pretraining and
/// fine-tuning.
///
/// The schedule is linear decay to zero over `total_steps` with no warmup
/// and no gradient clipping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Must be set by the caller; zero is rejected.
    pub total_steps: u64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub seed: u64,
    pub subset_fraction: f64,
    pub init_mode: InitMode,
    pub checkpoint_selection: CheckpointSelection,
    /// Loss-curve window, in steps.
    pub log_every: u64,
    /// Validation interval, in steps; 0 evaluates only after the last step.
    pub eval_every: u64,
    pub mask_ratio: f64,
    /// In re-emb mode, also re-sample the positional table.
    pub reembed_positional: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            batch_size: 32,
            total_steps: 0,
            betas: (0.9, 0.999),
            eps: 1e-8,
            seed: 0,
            subset_fraction: 1.0,
            init_mode: InitMode::Scratch,
            checkpoint_selection: CheckpointSelection::Final,
            log_every: 50,
            eval_every: 200,
            mask_ratio: 0.15,
            reembed_positional: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr {} must be positive", self.lr));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.total_steps == 0 {
            return fail("total_steps must be set".into());
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return fail(format!("betas {:?} must lie in [0, 1)", self.betas));
        }
        if !(self.eps > 0.0) {
            return fail("eps must be positive".into());
        }
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return fail(format!(
                "subset_fraction {} not in (0, 1]",
                self.subset_fraction
            ));
        }
        if self.log_every == 0 {
            return fail("log_every must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return fail(format!("mask_ratio {} not in [0, 1]", self.mask_ratio));
        }
        Ok(())
    }

    /// `lr * max(0, 1 - t / total_steps)` where `t` counts completed steps.
    pub fn lr_at(&self, t: u64) -> f64 {
        self.lr * (1.0 - t as f64 / self.total_steps as f64).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_linear() {
        let c = TrainConfig {
            lr: 2e-3,
            total_steps: 400,
            ..Default::default()
        };
        for t in 0..=400 {
            assert!((c.lr_at(t) / c.lr_at(0) - (1.0 - t as f64 / 400.0)).abs() < 1e-15);
        }
        assert_eq!(c.lr_at(400), 0.0);
        assert_eq!(c.lr_at(900), 0.0);
    }

    #[test]
    fn validation() {
        let ok = TrainConfig {
            total_steps: 1,
            ..Default::default()
        };
        assert!(ok.validate().is_ok());
        assert!(TrainConfig::default().validate().is_err());
        for bad in [
            TrainConfig {
                lr: 0.0,
                ..ok.clone()
            },
            TrainConfig {
                subset_fraction: 0.0,
                ..ok.clone()
            },
            TrainConfig {
                subset_fraction: 1.5,
                ..ok.clone()
            },
            TrainConfig {
                batch_size: 0,
                ..ok.clone()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn json_rejects_unknown_keys() {
        let c: TrainConfig =
            serde_json::from_str(r#"{"lr": 0.001, "init_mode": "re-emb"}"#).unwrap();
        assert_eq!(c.init_mode, InitMode::ReEmb);
        assert_eq!(c.batch_size, 32);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"learning_rate": 1}"#).is_err());
    }
}
