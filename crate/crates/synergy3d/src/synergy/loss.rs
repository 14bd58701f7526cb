//! Training losses.
//!
//! Parameter losses are sums of squared errors over the selected blocks
//! (no averaging within a block); the landmark loss is smooth-L1 summed over
//! landmarks and coordinates. Every loss is averaged over the batch so the
//! weight defaults transfer across batch sizes.

use super::config::{LossWeights, StopGrad, TargetBlocks};
use crate::error::Result;
use crate::morphable::PARAM_DIM;
use crate::tensor::Var;

fn block_mask(targets: TargetBlocks) -> Option<Vec<f64>> {
    if targets == TargetBlocks::All {
        return None;
    }
    let mut mask = vec![0.0; PARAM_DIM];
    for block in targets.blocks() {
        for i in block.range() {
            mask[i] = 1.0;
        }
    }
    Some(mask)
}

/// Sum of squared errors over parameter blocks, batch mean.
/// `pred` and `target` are `[batch, 62]`.
pub fn param_supervision_loss(pred: &Var, target: &Var, targets: TargetBlocks) -> Result<Var> {
    let mut d = pred.sub(target)?;
    if let Some(mask) = block_mask(targets) {
        d = d.scale_cols(&mask)?;
    }
    Ok(d.mul(&d)?.row_sum()?.mean_all())
}

/// Smooth-L1 alignment loss over `[batch, n, 3]` landmark sets, summed per
/// sample and averaged over the batch.
pub fn landmark_alignment_loss(pred: &Var, target: &Var, beta: f64) -> Result<Var> {
    let &[b, n, c] = pred.shape() else {
        return Err(crate::error::Error::ShapeMismatch {
            op: "landmark_alignment_loss",
            detail: format!("need [b,n,3] input, got {:?}", pred.shape()),
        });
    };
    let d = pred.sub(target)?.reshape(&[b, n * c])?;
    Ok(d.smooth_l1(beta)?.row_sum()?.mean_all())
}

/// Self-consistency between the two parameter estimates. Gradients reach
/// both producing networks unless one side is stopped.
pub fn consistency_loss(
    alpha: &Var,
    alpha_hat: &Var,
    stop: StopGrad,
    targets: TargetBlocks,
) -> Result<Var> {
    let a = match stop {
        StopGrad::Alpha => alpha.detach(),
        _ => alpha.clone(),
    };
    let b = match stop {
        StopGrad::AlphaHat => alpha_hat.detach(),
        _ => alpha_hat.clone(),
    };
    param_supervision_loss(&a, &b, targets)
}

/// Scalar values of the individual terms, for logging.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossValues {
    pub loss_3dmm: f64,
    pub loss_landmark: f64,
    pub loss_lmk_3dmm: f64,
    pub loss_consistency: f64,
    pub loss_total: f64,
}

/// Weighted combination of the four terms. Absent terms contribute zero.
pub fn weighted_total(
    loss_3dmm: &Var,
    loss_landmark: &Var,
    loss_lmk_3dmm: Option<&Var>,
    loss_consistency: Option<&Var>,
    weights: &LossWeights,
) -> Result<(Var, LossValues)> {
    let mut values = LossValues {
        loss_3dmm: loss_3dmm.item(),
        loss_landmark: loss_landmark.item(),
        ..LossValues::default()
    };
    let mut total = loss_3dmm
        .scale(weights.lambda_3dmm)
        .add(&loss_landmark.scale(weights.lambda_landmark))?;
    if let Some(l) = loss_lmk_3dmm {
        values.loss_lmk_3dmm = l.item();
        total = total.add(&l.scale(weights.lambda_lmk_3dmm))?;
    }
    if let Some(l) = loss_consistency {
        values.loss_consistency = l.item();
        total = total.add(&l.scale(weights.lambda_consistency))?;
    }
    values.loss_total = total.item();
    Ok((total, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn zero_error_means_zero_loss() {
        let tape = Tape::new();
        let a = tape.leaf(vec![1.0; PARAM_DIM], &[1, PARAM_DIM]).unwrap();
        let b = tape.leaf(vec![1.0; PARAM_DIM], &[1, PARAM_DIM]).unwrap();
        let l = param_supervision_loss(&a, &b, TargetBlocks::All).unwrap();
        assert_eq!(l.item(), 0.0);
    }

    #[test]
    fn single_coordinate_off_by_two_gives_four() {
        let tape = Tape::new();
        let mut pred = vec![0.0; PARAM_DIM];
        pred[20] = 2.0;
        let a = tape.leaf(pred, &[1, PARAM_DIM]).unwrap();
        let b = tape.leaf(vec![0.0; PARAM_DIM], &[1, PARAM_DIM]).unwrap();
        let l = param_supervision_loss(&a, &b, TargetBlocks::All).unwrap();
        assert_eq!(l.item(), 4.0);
    }

    #[test]
    fn param_loss_matches_loop_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(51);
        let batch = 3;
        let pred: Vec<f64> = (0..batch * PARAM_DIM).map(|_| rng.random_range(-2.0..2.0)).collect();
        let target: Vec<f64> =
            (0..batch * PARAM_DIM).map(|_| rng.random_range(-2.0..2.0)).collect();
        let tape = Tape::new();
        let a = tape.leaf(pred.clone(), &[batch, PARAM_DIM]).unwrap();
        let b = tape.leaf(target.clone(), &[batch, PARAM_DIM]).unwrap();
        let l = param_supervision_loss(&a, &b, TargetBlocks::All).unwrap();

        let mut expected = 0.0;
        for s in 0..batch {
            for i in 0..PARAM_DIM {
                let d = pred[s * PARAM_DIM + i] - target[s * PARAM_DIM + i];
                expected += d * d;
            }
        }
        expected /= batch as f64;
        assert!((l.item() - expected).abs() <= 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn block_masking_restricts_the_loss() {
        let tape = Tape::new();
        let mut pred = vec![0.0; PARAM_DIM];
        pred[0] = 1.0; // pose block
        pred[20] = 1.0; // shape block
        let a = tape.leaf(pred, &[1, PARAM_DIM]).unwrap();
        let b = tape.leaf(vec![0.0; PARAM_DIM], &[1, PARAM_DIM]).unwrap();
        let pose_only = param_supervision_loss(&a, &b, TargetBlocks::Pose).unwrap();
        assert_eq!(pose_only.item(), 1.0);
        let se = param_supervision_loss(&a, &b, TargetBlocks::ShapeExpr).unwrap();
        assert_eq!(se.item(), 1.0);
    }

    #[test]
    fn landmark_loss_branch_values() {
        let tape = Tape::new();
        // one landmark, single coordinate offsets of 0, 0.5, 2
        for (offset, expected) in [(0.0, 0.0), (0.5, 0.125), (2.0, 1.5)] {
            let p = tape.leaf(vec![offset, 0.0, 0.0], &[1, 1, 3]).unwrap();
            let t = tape.leaf(vec![0.0, 0.0, 0.0], &[1, 1, 3]).unwrap();
            let l = landmark_alignment_loss(&p, &t, 1.0).unwrap();
            assert_eq!(l.item(), expected);
        }
    }

    #[test]
    fn consistency_is_zero_on_equal_inputs_and_symmetric() {
        let mut rng = ChaCha12Rng::seed_from_u64(52);
        let tape = Tape::new();
        let a_data: Vec<f64> = (0..PARAM_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b_data: Vec<f64> = (0..PARAM_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = tape.leaf(a_data.clone(), &[1, PARAM_DIM]).unwrap();
        let b = tape.leaf(b_data, &[1, PARAM_DIM]).unwrap();
        let same = consistency_loss(&a, &a, StopGrad::None, TargetBlocks::All).unwrap();
        assert_eq!(same.item(), 0.0);
        let ab = consistency_loss(&a, &b, StopGrad::None, TargetBlocks::All).unwrap();
        let ba = consistency_loss(&b, &a, StopGrad::None, TargetBlocks::All).unwrap();
        assert_eq!(ab.item(), ba.item());
    }

    #[test]
    fn unit_offset_gives_unit_consistency() {
        let tape = Tape::new();
        let a = tape.leaf(vec![0.0; PARAM_DIM], &[1, PARAM_DIM]).unwrap();
        let mut shifted = vec![0.0; PARAM_DIM];
        shifted[7] = 1.0;
        let b = tape.leaf(shifted, &[1, PARAM_DIM]).unwrap();
        let l = consistency_loss(&a, &b, StopGrad::None, TargetBlocks::All).unwrap();
        assert_eq!(l.item(), 1.0);
    }

    #[test]
    fn default_weights_combine_unit_components_to_0_071() {
        let tape = Tape::new();
        let one = tape.leaf(vec![1.0], &[1]).unwrap();
        let (total, values) =
            weighted_total(&one, &one, Some(&one), Some(&one), &LossWeights::default()).unwrap();
        assert!((total.item() - 0.071).abs() < 1e-15);
        assert_eq!(values.loss_total, total.item());
    }

    #[test]
    fn zero_weight_removes_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(vec![3.0], &[1]).unwrap();
        let y = x.mul(&x).unwrap();
        let weights = LossWeights {
            lambda_landmark: 0.0,
            ..LossWeights::default()
        };
        let zero = tape.leaf(vec![0.0], &[1]).unwrap();
        let (total, _) = weighted_total(&zero, &y, None, None, &weights).unwrap();
        let grads = tape.backward(&total).unwrap();
        assert_eq!(grads.wrt(&x).unwrap(), &[0.0]);
    }

    #[test]
    fn total_is_monotone_in_each_component() {
        let tape = Tape::new();
        let weights = LossWeights::default();
        let low = tape.leaf(vec![1.0], &[1]).unwrap();
        let high = tape.leaf(vec![2.0], &[1]).unwrap();
        let (base, _) = weighted_total(&low, &low, Some(&low), Some(&low), &weights).unwrap();
        for slot in 0..4 {
            let pick = |i: usize| if i == slot { &high } else { &low };
            let (t, _) =
                weighted_total(pick(0), pick(1), Some(pick(2)), Some(pick(3)), &weights).unwrap();
            assert!(t.item() >= base.item());
        }
    }

    #[test]
    fn stop_grad_controls_which_side_learns() {
        let run = |stop: StopGrad| {
            let tape = Tape::new();
            let a = tape.leaf(vec![1.0; PARAM_DIM], &[1, PARAM_DIM]).unwrap();
            let b = tape.leaf(vec![2.0; PARAM_DIM], &[1, PARAM_DIM]).unwrap();
            let l = consistency_loss(&a, &b, stop, TargetBlocks::All).unwrap();
            let g = tape.backward(&l).unwrap();
            (g.wrt(&a).is_some(), g.wrt(&b).is_some())
        };
        assert_eq!(run(StopGrad::None), (true, true));
        assert_eq!(run(StopGrad::Alpha), (false, true));
        assert_eq!(run(StopGrad::AlphaHat), (true, false));
    }
}
