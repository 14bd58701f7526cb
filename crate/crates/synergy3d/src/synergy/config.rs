//! Network configuration and its versioned `key = value` text format.

use crate::error::{Error, Result};
use crate::morphable::{ParamBlock, N_EXPR, N_SHAPE};
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

/// Bottleneck pooling applied over the per-landmark encoder features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Average,
    Max,
}

/// Attribute set fused into the landmark refinement stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MafaAttributes {
    /// Global point features only.
    Point,
    /// Point features plus the latent observation code.
    PointImage,
    /// Point features, latent code, and shape/expression parameters.
    All,
}

/// Parameter blocks supervised at the landmark-to-parameter stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetBlocks {
    Pose,
    ShapeExpr,
    All,
}

impl TargetBlocks {
    pub fn blocks(self) -> &'static [ParamBlock] {
        match self {
            TargetBlocks::Pose => &[ParamBlock::Pose],
            TargetBlocks::ShapeExpr => &[ParamBlock::Shape, ParamBlock::Expr],
            TargetBlocks::All => &[ParamBlock::Pose, ParamBlock::Shape, ParamBlock::Expr],
        }
    }
}

/// Which landmark set feeds the landmark-to-parameter regressor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressorInput {
    Refined,
    Coarse,
}

/// Gradient stopping on the consistency term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopGrad {
    /// Both sides receive gradient (default).
    None,
    /// Freeze the observation-path parameters in the consistency term.
    Alpha,
    /// Freeze the landmark-path parameters in the consistency term.
    AlphaHat,
}

/// Loss weights for the four training terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_3dmm: f64,
    pub lambda_landmark: f64,
    pub lambda_lmk_3dmm: f64,
    pub lambda_consistency: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_3dmm: 0.02,
            lambda_landmark: 0.03,
            lambda_lmk_3dmm: 0.02,
            lambda_consistency: 0.001,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_3dmm", self.lambda_3dmm),
            ("lambda_landmark", self.lambda_landmark),
            ("lambda_lmk_3dmm", self.lambda_lmk_3dmm),
            ("lambda_consistency", self.lambda_consistency),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Landmark refinement stage dimensions. Derived sizes are computed, never
/// stored: with the defaults below and a 1280-dim latent code the fused
/// vector is 2354-dim and the per-point features are 68 x 2418.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MafaConfig {
    /// Channels of the low-level point features (two shared-MLP layers).
    pub low_level_channels: usize,
    /// Channels of the global point feature after max pooling.
    pub global_point_channels: usize,
    /// Hidden channels of the offset decoder (the final layer emits 3).
    pub decoder_hidden: Vec<usize>,
}

impl Default for MafaConfig {
    fn default() -> Self {
        Self {
            low_level_channels: 64,
            global_point_channels: 1024,
            decoder_hidden: vec![512, 256],
        }
    }
}

impl MafaConfig {
    /// Width of the fused attribute vector for a given attribute set.
    pub fn fused_dim(&self, latent_dim: usize, attributes: MafaAttributes) -> usize {
        match attributes {
            MafaAttributes::Point => self.global_point_channels,
            MafaAttributes::PointImage => self.global_point_channels + latent_dim,
            MafaAttributes::All => {
                self.global_point_channels + latent_dim + N_SHAPE + N_EXPR
            }
        }
    }

    /// Width of the per-point decoder input: fused vector appended to the
    /// low-level point features.
    pub fn per_point_dim(&self, latent_dim: usize, attributes: MafaAttributes) -> usize {
        self.fused_dim(latent_dim, attributes) + self.low_level_channels
    }
}

/// Complete architecture + loss configuration of the synergy networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub n_landmarks: usize,
    /// Per-landmark channels of the observation encoder shared MLP.
    pub encoder_hidden: Vec<usize>,
    /// Bottleneck code width.
    pub latent_dim: usize,
    pub pooling: Pooling,
    pub mafa: MafaConfig,
    /// Per-point channels of the landmark-to-parameter encoder.
    pub lmk3dmm_hidden: Vec<usize>,
    pub use_mafa: bool,
    pub use_lmk_to_3dmm: bool,
    pub mafa_attributes: MafaAttributes,
    pub lmk3dmm_targets: TargetBlocks,
    pub lmk3dmm_input: RegressorInput,
    /// Also fuse latent code and shape/expression parameters into the
    /// landmark-to-parameter regressor.
    pub lmk3dmm_fuse_attributes: bool,
    pub consistency_stop_grad: StopGrad,
    pub smooth_l1_beta: f64,
    pub weights: LossWeights,
    /// Training-time observation noise, as a fraction of the bbox size.
    pub obs_noise_sigma: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            n_landmarks: 68,
            encoder_hidden: vec![64, 128],
            latent_dim: 1280,
            pooling: Pooling::Average,
            mafa: MafaConfig::default(),
            lmk3dmm_hidden: vec![64, 64, 1024],
            use_mafa: true,
            use_lmk_to_3dmm: true,
            mafa_attributes: MafaAttributes::All,
            lmk3dmm_targets: TargetBlocks::All,
            lmk3dmm_input: RegressorInput::Refined,
            lmk3dmm_fuse_attributes: false,
            consistency_stop_grad: StopGrad::None,
            smooth_l1_beta: 1.0,
            weights: LossWeights::default(),
            obs_noise_sigma: 0.01,
        }
    }
}

impl NetConfig {
    /// Observation vector length: (x, y, visibility) per landmark.
    pub fn observation_dim(&self) -> usize {
        3 * self.n_landmarks
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_landmarks == 0 {
            return Err(Error::InvalidConfig("n_landmarks must be positive".into()));
        }
        if self.latent_dim == 0 {
            return Err(Error::InvalidConfig("latent_dim must be positive".into()));
        }
        for (name, list) in [
            ("encoder_hidden", &self.encoder_hidden),
            ("lmk3dmm_hidden", &self.lmk3dmm_hidden),
        ] {
            if list.is_empty() || list.contains(&0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be a non-empty list of positive sizes"
                )));
            }
        }
        if self.mafa.low_level_channels == 0 || self.mafa.global_point_channels == 0 {
            return Err(Error::InvalidConfig("refinement channel sizes must be positive".into()));
        }
        if self.mafa.decoder_hidden.contains(&0) {
            return Err(Error::InvalidConfig("decoder hidden sizes must be positive".into()));
        }
        if !(self.smooth_l1_beta.is_finite() && self.smooth_l1_beta > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "smooth_l1_beta must be > 0, got {}",
                self.smooth_l1_beta
            )));
        }
        if !(self.obs_noise_sigma.is_finite() && self.obs_noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "obs_noise_sigma must be >= 0, got {}",
                self.obs_noise_sigma
            )));
        }
        self.weights.validate()
    }

    /// Canonical text form: every field, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        };
        format!(
            "config_version = {CONFIG_VERSION}\n\
             n_landmarks = {}\n\
             encoder_hidden = {}\n\
             latent_dim = {}\n\
             pooling = {}\n\
             mafa_low_channels = {}\n\
             mafa_global_channels = {}\n\
             mafa_decoder_hidden = {}\n\
             lmk3dmm_hidden = {}\n\
             use_mafa = {}\n\
             use_lmk_to_3dmm = {}\n\
             mafa_attributes = {}\n\
             lmk3dmm_targets = {}\n\
             lmk3dmm_input = {}\n\
             lmk3dmm_fuse_attributes = {}\n\
             consistency_stop_grad = {}\n\
             smooth_l1_beta = {}\n\
             lambda_3dmm = {}\n\
             lambda_landmark = {}\n\
             lambda_lmk_3dmm = {}\n\
             lambda_consistency = {}\n\
             obs_noise_sigma = {}\n",
            self.n_landmarks,
            list(&self.encoder_hidden),
            self.latent_dim,
            match self.pooling {
                Pooling::Average => "average",
                Pooling::Max => "max",
            },
            self.mafa.low_level_channels,
            self.mafa.global_point_channels,
            list(&self.mafa.decoder_hidden),
            list(&self.lmk3dmm_hidden),
            self.use_mafa,
            self.use_lmk_to_3dmm,
            match self.mafa_attributes {
                MafaAttributes::Point => "point",
                MafaAttributes::PointImage => "point_image",
                MafaAttributes::All => "all",
            },
            match self.lmk3dmm_targets {
                TargetBlocks::Pose => "pose",
                TargetBlocks::ShapeExpr => "shape_expr",
                TargetBlocks::All => "all",
            },
            match self.lmk3dmm_input {
                RegressorInput::Refined => "refined",
                RegressorInput::Coarse => "coarse",
            },
            self.lmk3dmm_fuse_attributes,
            match self.consistency_stop_grad {
                StopGrad::None => "none",
                StopGrad::Alpha => "alpha",
                StopGrad::AlphaHat => "alpha_hat",
            },
            self.smooth_l1_beta,
            self.weights.lambda_3dmm,
            self.weights.lambda_landmark,
            self.weights.lambda_lmk_3dmm,
            self.weights.lambda_consistency,
            self.obs_noise_sigma,
        )
    }

    /// Parses the text form. Missing keys take defaults; unknown keys and a
    /// wrong `config_version` are rejected.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = NetConfig::default();
        let bad = |line: usize, detail: String| {
            Error::InvalidConfig(format!("line {line}: {detail}"))
        };
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
            let parse_usize = |v: &str| {
                v.parse::<usize>()
                    .map_err(|e| bad(line_no, format!("bad integer '{v}': {e}")))
            };
            let parse_f64 = |v: &str| {
                v.parse::<f64>()
                    .map_err(|e| bad(line_no, format!("bad number '{v}': {e}")))
            };
            let parse_bool = |v: &str| match v {
                "true" => Ok(true),
                "false" => Ok(false),
                other => Err(bad(line_no, format!("bad bool '{other}'"))),
            };
            let parse_list = |v: &str| -> Result<Vec<usize>> {
                v.split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<usize>()
                            .map_err(|e| bad(line_no, format!("bad list entry '{t}': {e}")))
                    })
                    .collect()
            };
            match key {
                "config_version" => {
                    let v = parse_usize(value)?;
                    if v as u32 != CONFIG_VERSION {
                        return Err(bad(line_no, format!("unsupported config_version {v}")));
                    }
                    version_seen = true;
                }
                "n_landmarks" => cfg.n_landmarks = parse_usize(value)?,
                "encoder_hidden" => cfg.encoder_hidden = parse_list(value)?,
                "latent_dim" => cfg.latent_dim = parse_usize(value)?,
                "pooling" => {
                    cfg.pooling = match value {
                        "average" => Pooling::Average,
                        "max" => Pooling::Max,
                        other => return Err(bad(line_no, format!("bad pooling '{other}'"))),
                    }
                }
                "mafa_low_channels" => cfg.mafa.low_level_channels = parse_usize(value)?,
                "mafa_global_channels" => cfg.mafa.global_point_channels = parse_usize(value)?,
                "mafa_decoder_hidden" => cfg.mafa.decoder_hidden = parse_list(value)?,
                "lmk3dmm_hidden" => cfg.lmk3dmm_hidden = parse_list(value)?,
                "use_mafa" => cfg.use_mafa = parse_bool(value)?,
                "use_lmk_to_3dmm" => cfg.use_lmk_to_3dmm = parse_bool(value)?,
                "mafa_attributes" => {
                    cfg.mafa_attributes = match value {
                        "point" => MafaAttributes::Point,
                        "point_image" => MafaAttributes::PointImage,
                        "all" => MafaAttributes::All,
                        other => return Err(bad(line_no, format!("bad attributes '{other}'"))),
                    }
                }
                "lmk3dmm_targets" => {
                    cfg.lmk3dmm_targets = match value {
                        "pose" => TargetBlocks::Pose,
                        "shape_expr" => TargetBlocks::ShapeExpr,
                        "all" => TargetBlocks::All,
                        other => return Err(bad(line_no, format!("bad targets '{other}'"))),
                    }
                }
                "lmk3dmm_input" => {
                    cfg.lmk3dmm_input = match value {
                        "refined" => RegressorInput::Refined,
                        "coarse" => RegressorInput::Coarse,
                        other => return Err(bad(line_no, format!("bad input '{other}'"))),
                    }
                }
                "lmk3dmm_fuse_attributes" => cfg.lmk3dmm_fuse_attributes = parse_bool(value)?,
                "consistency_stop_grad" => {
                    cfg.consistency_stop_grad = match value {
                        "none" => StopGrad::None,
                        "alpha" => StopGrad::Alpha,
                        "alpha_hat" => StopGrad::AlphaHat,
                        other => return Err(bad(line_no, format!("bad stop_grad '{other}'"))),
                    }
                }
                "smooth_l1_beta" => cfg.smooth_l1_beta = parse_f64(value)?,
                "lambda_3dmm" => cfg.weights.lambda_3dmm = parse_f64(value)?,
                "lambda_landmark" => cfg.weights.lambda_landmark = parse_f64(value)?,
                "lambda_lmk_3dmm" => cfg.weights.lambda_lmk_3dmm = parse_f64(value)?,
                "lambda_consistency" => cfg.weights.lambda_consistency = parse_f64(value)?,
                "obs_noise_sigma" => cfg.obs_noise_sigma = parse_f64(value)?,
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
    fn default_dims_match_reference_sizes() {
        let cfg = NetConfig::default();
        assert_eq!(cfg.mafa.fused_dim(cfg.latent_dim, MafaAttributes::All), 2354);
        assert_eq!(cfg.mafa.per_point_dim(cfg.latent_dim, MafaAttributes::All), 2418);
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = NetConfig::default();
        cfg.latent_dim = 32;
        cfg.pooling = Pooling::Max;
        cfg.use_mafa = false;
        cfg.weights.lambda_consistency = 0.5;
        let text = cfg.to_text();
        let back = NetConfig::from_text(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_rejected() {
        let text = "config_version = 1\nbogus = 2\n";
        assert!(NetConfig::from_text(text).is_err());
    }

    #[test]
    fn missing_version_rejected() {
        assert!(NetConfig::from_text("latent_dim = 8\n").is_err());
    }
}
