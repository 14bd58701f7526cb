//! JSON report envelope shared by every evaluation protocol.

use super::{AlignmentResult, ModelingResult, OrientationResult};
use crate::error::Result;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// `{protocol, per_bin, overall, n_samples, n_excluded, config_echo}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub protocol: String,
    pub per_bin: BTreeMap<String, serde_json::Value>,
    pub overall: f64,
    pub n_samples: usize,
    pub n_excluded: usize,
    pub config_echo: serde_json::Value,
}

impl MetricsReport {
    pub fn from_alignment(result: &AlignmentResult, config_echo: serde_json::Value) -> Self {
        let mut per_bin = BTreeMap::new();
        let labels = ["yaw_0_30", "yaw_30_60", "yaw_60_90"];
        for (label, bin) in labels.iter().zip(&result.bins) {
            per_bin.insert(label.to_string(), serde_json::json!(bin));
        }
        per_bin.insert(
            "overall_binmean".into(),
            serde_json::json!(result.overall_binmean),
        );
        per_bin.insert(
            "overall_pooled".into(),
            serde_json::json!(result.overall_pooled),
        );
        Self {
            protocol: "alignment-nme".into(),
            per_bin,
            overall: result.overall_pooled,
            n_samples: result.n_samples,
            n_excluded: 0,
            config_echo,
        }
    }

    pub fn from_orientation(result: &OrientationResult, config_echo: serde_json::Value) -> Self {
        let mut per_bin = BTreeMap::new();
        per_bin.insert("yaw".into(), serde_json::json!(result.yaw_mae));
        per_bin.insert("pitch".into(), serde_json::json!(result.pitch_mae));
        per_bin.insert("roll".into(), serde_json::json!(result.roll_mae));
        Self {
            protocol: "orientation-mae".into(),
            per_bin,
            overall: result.mean_mae,
            n_samples: result.n_samples,
            n_excluded: result.n_excluded,
            config_echo,
        }
    }

    pub fn from_modeling(result: &ModelingResult, config_echo: serde_json::Value) -> Self {
        Self {
            protocol: serde_json::to_value(result.protocol)
                .expect("protocol tag serializes")
                .as_str()
                .expect("protocol tag is a string")
                .to_string(),
            per_bin: BTreeMap::new(),
            overall: result.mean,
            n_samples: result.n_samples,
            n_excluded: 0,
            config_echo,
        }
    }

    pub fn to_json_string(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }
}
