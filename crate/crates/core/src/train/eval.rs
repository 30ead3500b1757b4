use crate::measure::Measurement;
use crate::metrics::{icc_2_1, EvaluationReport, IccResult, PairedSamples};
use crate::nn::ModelState;
use crate::phantom::{Scaler, Volume3D};
use crate::tensor::Tensor;

use super::TrainError;

/// Stacks single-channel volumes into an `[N,1,D,H,W]` batch.
pub fn stack_batch<'a>(volumes: impl IntoIterator<Item = &'a Volume3D>) -> Tensor<f32> {
    let mut data = Vec::new();
    let mut n = 0;
    let mut dims = [0; 3];
    for v in volumes {
        dims = v.dims();
        data.extend_from_slice(v.voxels());
        n += 1;
    }
    Tensor::new(vec![n, 1, dims[0], dims[1], dims[2]], data).expect("volumes share dims")
}

/// Combined predictions, one row per volume, in the model's output space.
pub fn predict(model: &ModelState, volumes: &[&Volume3D], batch_size: usize) -> Result<Vec<Vec<f64>>, TrainError> {
    let mut out = Vec::with_capacity(volumes.len());
    for chunk in volumes.chunks(batch_size.max(1)) {
        let pred = model.forward(&stack_batch(chunk.iter().copied()))?.combined;
        let m = pred.shape()[1];
        out.extend(pred.data().chunks(m).map(|r| r.iter().map(|&v| v as f64).collect()));
    }
    Ok(out)
}

/// ICC(2,1) per measurement between references and predictions (row per
/// scan, column per measurement).
pub fn icc_per_measurement(reference: &[Vec<f64>], prediction: &[Vec<f64>]) -> Result<Vec<IccResult>, TrainError> {
    let m = reference.first().map_or(0, |r| r.len());
    (0..m)
        .map(|j| {
            let r: Vec<f64> = reference.iter().map(|row| row[j]).collect();
            let p: Vec<f64> = prediction.iter().map(|row| row[j]).collect();
            Ok(icc_2_1(&PairedSamples::from_pairs(&r, &p)?, 0.95)?)
        })
        .collect()
}

pub fn mean_icc(results: &[IccResult]) -> f64 {
    results.iter().map(|r| r.icc).sum::<f64>() / results.len().max(1) as f64
}

/// Mean squared error in normalized target space.
pub fn normalized_mse(reference: &[Vec<f64>], prediction: &[Vec<f64>]) -> f64 {
    let (mut acc, mut n) = (0.0, 0usize);
    for (r, p) in reference.iter().zip(prediction) {
        for (a, b) in r.iter().zip(p) {
            acc += (a - b) * (a - b);
            n += 1;
        }
    }
    acc / n.max(1) as f64
}

/// Outcome of scoring a model on one split.
#[derive(Clone, Debug)]
pub struct SplitEvaluation {
    pub report: EvaluationReport,
    /// Predictions in physical units, one row per scan.
    pub predictions: Vec<Vec<f64>>,
    pub mse_normalized: f64,
}

/// Runs inference, maps predictions back to physical units and scores
/// each measurement against `targets` (physical units).
pub fn evaluate_volumes(
    model: &ModelState,
    volumes: &[&Volume3D],
    targets: &[Vec<f64>],
    measurements: &[Measurement],
    scaler: &Scaler,
    batch_size: usize,
) -> Result<SplitEvaluation, TrainError> {
    let normalized = predict(model, volumes, batch_size)?;
    let predictions: Vec<Vec<f64>> = normalized.iter().map(|p| scaler.invert(p)).collect();
    let scaled_targets: Vec<Vec<f64>> = targets.iter().map(|t| scaler.apply(t)).collect();
    let mse_normalized = normalized_mse(&scaled_targets, &normalized);
    let results = icc_per_measurement(targets, &predictions)?;
    Ok(SplitEvaluation {
        report: EvaluationReport::from_results(measurements.iter().zip(&results)),
        predictions,
        mse_normalized,
    })
}
