//! Runs a trained model over a dataset and feeds the metric protocols.

use crate::error::{Error, Result};
use crate::metrics::{
    binned_nme, euler_mae, florence_rmse, modeling_error_p1, modeling_error_p2, nme,
    AlignmentResult, ModelingProtocol, ModelingResult, OrientationResult,
};
use crate::morphable::{
    apply_pose, full_forward, reconstruct_frontal, rotation_to_euler, EulerAngles, FaceBasis,
    LandmarkSet, Mesh, NOSE_TIP_LANDMARK, OUTER_EYE_LANDMARKS,
};
use crate::synergy::{Prediction, SynergyModel};
use crate::synthdata::Dataset;
use rayon::prelude::*;

const EVAL_BATCH: usize = 256;

/// Eval-mode predictions for the given sample indices, in order.
pub fn predict_dataset(
    model: &SynergyModel,
    dataset: &Dataset,
    indices: &[usize],
) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_BATCH) {
        let obs: Vec<Vec<f64>> = chunk
            .iter()
            .map(|&i| dataset.samples[i].observation_f64())
            .collect();
        out.extend(model.predict(&obs)?);
    }
    Ok(out)
}

/// Yaw-binned NME of the refined landmarks against groundtruth, measured
/// over the first `dims` coordinates and normalized by each sample's stored
/// bbox size.
pub fn evaluate_alignment(
    model: &SynergyModel,
    dataset: &Dataset,
    indices: &[usize],
    dims: usize,
) -> Result<AlignmentResult> {
    let predictions = predict_dataset(model, dataset, indices)?;
    alignment_from_predictions(&predictions, dataset, indices, dims)
}

/// Same aggregation for externally supplied landmark predictions.
pub fn alignment_from_landmarks(
    predicted: &[LandmarkSet],
    dataset: &Dataset,
    indices: &[usize],
    dims: usize,
) -> Result<AlignmentResult> {
    if predicted.len() != indices.len() {
        return Err(Error::ShapeMismatch {
            op: "alignment_from_landmarks",
            detail: format!("{} predictions vs {} indices", predicted.len(), indices.len()),
        });
    }
    let mut per_sample = Vec::with_capacity(indices.len());
    let mut yaws = Vec::with_capacity(indices.len());
    for (lm, &i) in predicted.iter().zip(indices) {
        let sample = &dataset.samples[i];
        let gt = LandmarkSet::new(sample.landmarks_star_f64())?;
        per_sample.push(nme(lm, &gt, sample.bbox_size as f64, dims)?);
        yaws.push(sample.euler[0] as f64);
    }
    binned_nme(&per_sample, &yaws)
}

fn alignment_from_predictions(
    predictions: &[Prediction],
    dataset: &Dataset,
    indices: &[usize],
    dims: usize,
) -> Result<AlignmentResult> {
    let landmarks: Vec<LandmarkSet> = predictions.iter().map(|p| p.refined.clone()).collect();
    alignment_from_landmarks(&landmarks, dataset, indices, dims)
}

fn gt_angles(dataset: &Dataset, indices: &[usize]) -> Vec<EulerAngles> {
    indices
        .iter()
        .map(|&i| {
            let e = dataset.samples[i].euler;
            EulerAngles {
                yaw: e[0] as f64,
                pitch: e[1] as f64,
                roll: e[2] as f64,
            }
        })
        .collect()
}

fn orientation_from_predictions(
    predictions: &[Prediction],
    dataset: &Dataset,
    indices: &[usize],
) -> Result<OrientationResult> {
    let pred_angles: Result<Vec<EulerAngles>> = predictions
        .iter()
        .map(|p| rotation_to_euler(&p.pose.rotation))
        .collect();
    euler_mae(&pred_angles?, &gt_angles(dataset, indices))
}

/// Euler MAE of the factored poses against the stored groundtruth angles.
pub fn evaluate_orientation(
    model: &SynergyModel,
    dataset: &Dataset,
    indices: &[usize],
) -> Result<OrientationResult> {
    let predictions = predict_dataset(model, dataset, indices)?;
    orientation_from_predictions(&predictions, dataset, indices)
}

/// Both alignment and orientation from one prediction pass.
pub fn evaluate_alignment_and_orientation(
    model: &SynergyModel,
    dataset: &Dataset,
    indices: &[usize],
    dims: usize,
) -> Result<(AlignmentResult, OrientationResult)> {
    let predictions = predict_dataset(model, dataset, indices)?;
    Ok((
        alignment_from_predictions(&predictions, dataset, indices, dims)?,
        orientation_from_predictions(&predictions, dataset, indices)?,
    ))
}

/// Groundtruth and predicted meshes for one sample.
fn sample_meshes(
    prediction: &Prediction,
    dataset: &Dataset,
    basis: &FaceBasis,
    index: usize,
) -> Result<(Mesh, Mesh)> {
    let gt_params = dataset.samples[index].params()?;
    let (gt_mesh, _) = full_forward(basis, &gt_params)?;
    let frontal = reconstruct_frontal(basis, &prediction.alpha.shape, &prediction.alpha.expr)?;
    let pred_mesh = apply_pose(&frontal, &prediction.pose)?;
    Ok((pred_mesh, gt_mesh))
}

/// Interocular distance of a mesh: outer eye-corner landmark vertices.
pub fn interocular_distance(mesh: &Mesh, basis: &FaceBasis) -> f64 {
    let a = mesh.vertex(basis.landmark_indices[OUTER_EYE_LANDMARKS.0]);
    let b = mesh.vertex(basis.landmark_indices[OUTER_EYE_LANDMARKS.1]);
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Which modeling protocol to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelingKind {
    P1,
    P2,
    Florence,
}

/// Dense 3D modeling error under the chosen protocol. Per-sample errors are
/// computed in parallel; aggregation order stays deterministic.
pub fn evaluate_modeling(
    model: &SynergyModel,
    dataset: &Dataset,
    basis: &FaceBasis,
    indices: &[usize],
    kind: ModelingKind,
) -> Result<ModelingResult> {
    let predictions = predict_dataset(model, dataset, indices)?;
    let jobs: Vec<(usize, &Prediction)> =
        indices.iter().copied().zip(predictions.iter()).collect();
    let errors: Result<Vec<f64>> = jobs
        .par_iter()
        .map(|&(index, ref prediction)| {
            let (pred_mesh, gt_mesh) = sample_meshes(prediction, dataset, basis, index)?;
            match kind {
                ModelingKind::P1 => {
                    let interocular = interocular_distance(&gt_mesh, basis);
                    modeling_error_p1(&pred_mesh, &gt_mesh, interocular)
                }
                ModelingKind::P2 => modeling_error_p2(
                    &pred_mesh,
                    &gt_mesh,
                    dataset.samples[index].bbox_size as f64,
                ),
                ModelingKind::Florence => {
                    let nose_vertex = basis.landmark_indices[NOSE_TIP_LANDMARK];
                    florence_rmse(&pred_mesh, &gt_mesh, nose_vertex)
                }
            }
        })
        .collect();
    let protocol = match kind {
        ModelingKind::P1 => ModelingProtocol::P1IcpInterocular,
        ModelingKind::P2 => ModelingProtocol::P2DenseBbox,
        ModelingKind::Florence => ModelingProtocol::PointToPlaneCrop,
    };
    Ok(ModelingResult::from_errors(protocol, errors?))
}
