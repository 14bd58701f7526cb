//! Training configuration and its `key = value` text format.

use crate::error::{Error, Result};
use crate::synergy::NetConfig;
use serde::{Deserialize, Serialize};

/// The four module configurations of the core ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Plain regression: no refinement, no landmark-to-parameter stage.
    Baseline,
    MafaOnly,
    Lmk3dmmOnly,
    Full,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [
        AblationMode::Baseline,
        AblationMode::MafaOnly,
        AblationMode::Lmk3dmmOnly,
        AblationMode::Full,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationMode::Baseline => "baseline",
            AblationMode::MafaOnly => "mafa_only",
            AblationMode::Lmk3dmmOnly => "lmk3dmm_only",
            AblationMode::Full => "full",
        }
    }

    /// Applies the mode's module switches to a network configuration.
    pub fn apply(self, cfg: &mut NetConfig) {
        let (mafa, reverse) = match self {
            AblationMode::Baseline => (false, false),
            AblationMode::MafaOnly => (true, false),
            AblationMode::Lmk3dmmOnly => (false, true),
            AblationMode::Full => (true, true),
        };
        cfg.use_mafa = mafa;
        cfg.use_lmk_to_3dmm = reverse;
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "baseline" => Ok(AblationMode::Baseline),
            "mafa_only" => Ok(AblationMode::MafaOnly),
            "lmk3dmm_only" => Ok(AblationMode::Lmk3dmmOnly),
            "full" => Ok(AblationMode::Full),
            other => Err(Error::InvalidConfig(format!("unknown mode '{other}'"))),
        }
    }
}

/// Optimization recipe: SGD with momentum and a two-step decay schedule
/// expressed as fractions of the epoch budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    /// Schedule breakpoints as fractions of `epochs` (0.6, 0.8 by default,
    /// matching decays after 48 and 64 of 80 epochs).
    pub decay_fracs: (f64, f64),
    /// Multipliers of the base rate after each breakpoint.
    pub decay_factors: (f64, f64),
    pub seed: u64,
    /// Module-switch override; `None` keeps the network config's flags.
    pub mode: Option<AblationMode>,
    /// Save a snapshot every this many epochs; 0 keeps only best and final.
    pub checkpoint_every: usize,
    /// Data-parallel shards per batch. 1 is the reproducibility reference.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            batch_size: 128,
            base_lr: 0.05,
            momentum: 0.9,
            decay_fracs: (0.6, 0.8),
            decay_factors: (0.1, 0.01),
            seed: 0,
            mode: None,
            checkpoint_every: 0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(
                "batch_size must be at least 2 (batch-norm constraint)".into(),
            ));
        }
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) {
            return Err(Error::InvalidConfig(format!("bad base_lr {}", self.base_lr)));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::InvalidConfig(format!("bad momentum {}", self.momentum)));
        }
        let (f1, f2) = self.decay_fracs;
        if !(f1 > 0.0 && f1 < f2 && f2 < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "decay fractions must be ordered within (0,1), got ({f1}, {f2})"
            )));
        }
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        format!(
            "config_version = 1\n\
             epochs = {}\n\
             batch_size = {}\n\
             base_lr = {}\n\
             momentum = {}\n\
             decay_fracs = {},{}\n\
             decay_factors = {},{}\n\
             seed = {}\n\
             mode = {}\n\
             checkpoint_every = {}\n\
             workers = {}\n",
            self.epochs,
            self.batch_size,
            self.base_lr,
            self.momentum,
            self.decay_fracs.0,
            self.decay_fracs.1,
            self.decay_factors.0,
            self.decay_factors.1,
            self.seed,
            self.mode.map_or("from_net_config", |m| m.label()),
            self.checkpoint_every,
            self.workers,
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let bad =
            |line: usize, detail: String| Error::InvalidConfig(format!("line {line}: {detail}"));
        let mut version_seen = false;
        for (no, raw) in text.lines().enumerate() {
            let line_no = no + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(line_no, format!("expected 'key = value', got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let parse_f64 = |v: &str| {
                v.parse::<f64>()
                    .map_err(|e| bad(line_no, format!("bad number '{v}': {e}")))
            };
            let parse_pair = |v: &str| -> Result<(f64, f64)> {
                let mut it = v.split(',').map(str::trim);
                let a = it
                    .next()
                    .ok_or_else(|| bad(line_no, "expected two values".into()))?;
                let b = it
                    .next()
                    .ok_or_else(|| bad(line_no, "expected two values".into()))?;
                if it.next().is_some() {
                    return Err(bad(line_no, "expected exactly two values".into()));
                }
                Ok((parse_f64(a)?, parse_f64(b)?))
            };
            match key {
                "config_version" => {
                    if value != "1" {
                        return Err(bad(line_no, format!("unsupported config_version {value}")));
                    }
                    version_seen = true;
                }
                "epochs" => {
                    cfg.epochs = value
                        .parse()
                        .map_err(|e| bad(line_no, format!("bad epochs '{value}': {e}")))?
                }
                "batch_size" => {
                    cfg.batch_size = value
                        .parse()
                        .map_err(|e| bad(line_no, format!("bad batch_size '{value}': {e}")))?
                }
                "base_lr" => cfg.base_lr = parse_f64(value)?,
                "momentum" => cfg.momentum = parse_f64(value)?,
                "decay_fracs" => cfg.decay_fracs = parse_pair(value)?,
                "decay_factors" => cfg.decay_factors = parse_pair(value)?,
                "seed" => {
                    cfg.seed = value
                        .parse()
                        .map_err(|e| bad(line_no, format!("bad seed '{value}': {e}")))?
                }
                "mode" => {
                    cfg.mode = if value == "from_net_config" {
                        None
                    } else {
                        Some(AblationMode::parse(value)?)
                    }
                }
                "checkpoint_every" => {
                    cfg.checkpoint_every = value
                        .parse()
                        .map_err(|e| bad(line_no, format!("bad checkpoint_every: {e}")))?
                }
                "workers" => {
                    cfg.workers = value
                        .parse()
                        .map_err(|e| bad(line_no, format!("bad workers: {e}")))?
                }
                other => return Err(bad(line_no, format!("unknown key '{other}'"))),
            }
        }
        if !version_seen {
            return Err(Error::InvalidConfig("missing config_version".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = TrainConfig {
            epochs: 20,
            batch_size: 64,
            base_lr: 0.03,
            seed: 7,
            mode: Some(AblationMode::MafaOnly),
            ..TrainConfig::default()
        };
        let back = TrainConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        cfg.mode = None;
        let back = TrainConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invariants_enforced() {
        let mut cfg = TrainConfig::default();
        cfg.batch_size = 1;
        assert!(cfg.validate().is_err());
        cfg.batch_size = 8;
        cfg.decay_fracs = (0.8, 0.6);
        assert!(cfg.validate().is_err());
    }
}
