//! Ablation grids: trains module/attribute/target variants under identical
//! seeds and reports yaw-binned alignment plus orientation per row.

use super::{train, AblationMode, TrainConfig};
use crate::error::Result;
use crate::eval::evaluate_alignment_and_orientation;
use crate::metrics::{AlignmentResult, OrientationResult};
use crate::morphable::FaceBasis;
use crate::synergy::{MafaAttributes, NetConfig, TargetBlocks};
use crate::synthdata::Dataset;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// One grid row: a labelled network configuration.
#[derive(Debug, Clone)]
pub struct GridRowSpec {
    pub label: String,
    pub net: NetConfig,
}

/// The four module combinations (the core ablation table).
pub fn core_rows(base: &NetConfig) -> Vec<GridRowSpec> {
    AblationMode::ALL
        .iter()
        .map(|mode| {
            let mut net = base.clone();
            mode.apply(&mut net);
            GridRowSpec {
                label: mode.label().to_string(),
                net,
            }
        })
        .collect()
}

/// Attribute variants at the refinement stage: point features only,
/// point + latent code, and all attributes.
pub fn attribute_rows(base: &NetConfig) -> Vec<GridRowSpec> {
    [
        ("point_only", MafaAttributes::Point),
        ("point_image", MafaAttributes::PointImage),
        ("all_attributes", MafaAttributes::All),
    ]
    .into_iter()
    .map(|(label, attrs)| {
        let mut net = base.clone();
        net.use_mafa = true;
        net.use_lmk_to_3dmm = false;
        net.mafa_attributes = attrs;
        GridRowSpec {
            label: label.to_string(),
            net,
        }
    })
    .collect()
}

/// Regression-target variants at the landmark-to-parameter stage.
pub fn target_rows(base: &NetConfig) -> Vec<GridRowSpec> {
    [
        ("targets_pose", TargetBlocks::Pose),
        ("targets_shape_expr", TargetBlocks::ShapeExpr),
        ("targets_all", TargetBlocks::All),
    ]
    .into_iter()
    .map(|(label, targets)| {
        let mut net = base.clone();
        net.use_mafa = true;
        net.use_lmk_to_3dmm = true;
        net.lmk3dmm_targets = targets;
        GridRowSpec {
            label: label.to_string(),
            net,
        }
    })
    .collect()
}

/// One trained-and-evaluated grid entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridRow {
    pub label: String,
    pub seed: u64,
    pub alignment: AlignmentResult,
    pub orientation: OrientationResult,
    pub best_epoch: usize,
}

/// Combined report, rows ordered configuration-major then seed-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
}

impl GridReport {
    /// Yaw-binned NME table, one row per configuration/seed.
    pub fn table_string(&self) -> String {
        let mut out = String::from(
            "configuration        seed   0-30    30-60   60-90   all     mae\n",
        );
        for row in &self.rows {
            let bin = |i: usize| {
                row.alignment.bins[i]
                    .map_or_else(|| "   -  ".to_string(), |v| format!("{:.4}", 100.0 * v))
            };
            out.push_str(&format!(
                "{:<20} {:<6} {} {} {} {:.4}  {:.3}\n",
                row.label,
                row.seed,
                bin(0),
                bin(1),
                bin(2),
                100.0 * row.alignment.overall_pooled,
                row.orientation.mean_mae,
            ));
        }
        out
    }
}

/// Trains every (row, seed) combination and evaluates the held-out split.
/// Runs are independent; up to `jobs` of them execute concurrently and the
/// report order never depends on scheduling.
pub fn run_ablation_grid(
    dataset: &Dataset,
    basis: &FaceBasis,
    rows: &[GridRowSpec],
    seeds: &[u64],
    train_base: &TrainConfig,
    jobs: usize,
) -> Result<GridReport> {
    let mut tasks = Vec::new();
    for row in rows {
        for &seed in seeds {
            tasks.push((row.clone(), seed));
        }
    }
    let n_tasks = tasks.len();
    let results: Mutex<Vec<Option<Result<GridRow>>>> =
        Mutex::new((0..n_tasks).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = jobs.max(1).min(n_tasks.max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= n_tasks {
                    break;
                }
                let (row, seed) = &tasks[idx];
                let outcome = run_single(dataset, basis, row, *seed, train_base);
                results.lock().expect("results lock").get_mut(idx).map(|slot| {
                    *slot = Some(outcome);
                });
            });
        }
    });

    let mut rows_out = Vec::with_capacity(n_tasks);
    for slot in results.into_inner().expect("results lock") {
        rows_out.push(slot.expect("every grid task ran")?);
    }
    Ok(GridReport { rows: rows_out })
}

fn run_single(
    dataset: &Dataset,
    basis: &FaceBasis,
    row: &GridRowSpec,
    seed: u64,
    train_base: &TrainConfig,
) -> Result<GridRow> {
    let cfg = TrainConfig {
        seed,
        mode: None,
        ..train_base.clone()
    };
    let result = train(dataset, basis, &row.net, &cfg)?;
    let val: Vec<usize> = dataset.val_indices().collect();
    let (alignment, orientation) =
        evaluate_alignment_and_orientation(&result.model, dataset, &val, 2)?;
    Ok(GridRow {
        label: row.label.clone(),
        seed,
        alignment,
        orientation,
        best_epoch: result.best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{make_synthetic_basis, sample_dataset, SynthConfig};

    #[test]
    fn grid_of_one_matches_a_single_run() {
        let basis = make_synthetic_basis(2, 120).unwrap();
        let config = SynthConfig::default_for_basis(&basis, 5, 30);
        let dataset = sample_dataset(&basis, &config).unwrap();
        let net = crate::trainer::mod_tests_tiny_net();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            base_lr: 1e-4,
            ..TrainConfig::default()
        };
        let rows = vec![GridRowSpec {
            label: "full".into(),
            net: net.clone(),
        }];
        let report = run_ablation_grid(&dataset, &basis, &rows, &[5], &cfg, 1).unwrap();
        assert_eq!(report.rows.len(), 1);

        let single_cfg = TrainConfig {
            seed: 5,
            ..cfg.clone()
        };
        let single = train(&dataset, &basis, &net, &single_cfg).unwrap();
        let val: Vec<usize> = dataset.val_indices().collect();
        let (alignment, _) =
            evaluate_alignment_and_orientation(&single.model, &dataset, &val, 2).unwrap();
        assert_eq!(
            report.rows[0].alignment.overall_pooled.to_bits(),
            alignment.overall_pooled.to_bits()
        );
    }

    #[test]
    fn row_ordering_is_configuration_major_and_deterministic() {
        let net = crate::trainer::mod_tests_tiny_net();
        let rows = core_rows(&net);
        let labels: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, ["baseline", "mafa_only", "lmk3dmm_only", "full"]);
        assert!(!rows[0].net.use_mafa && !rows[0].net.use_lmk_to_3dmm);
        assert!(rows[3].net.use_mafa && rows[3].net.use_lmk_to_3dmm);
    }
}
