//! Optimizers and the pieces of the training recipe that do not touch data:
//! Adam, plain SGD, the cyclic linear learning-rate schedule, weight
//! averaging and best-epoch selection.

mod adam;
mod schedule;

pub use adam::{AdamConfig, AdamState};
pub use schedule::{cyclic_lr, CyclicSchedule};

use indexmap::IndexMap;
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient in parameter {0:?}; step rejected")]
    NonFiniteGradient(String),
    #[error("no gradient supplied for parameter {0:?}")]
    MissingGradient(String),
    #[error("gradient for {name:?} has shape {got:?}, parameter has {expected:?}")]
    GradientShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("cycle length must be at least 2 steps, got {0}")]
    CycleTooShort(usize),
    #[error("learning rates must satisfy 0 < lr_min <= lr_max, got min {min}, max {max}")]
    LearningRates { min: f64, max: f64 },
    #[error("snapshot has {got} values, running mean has {expected}")]
    SnapshotLength { expected: usize, got: usize },
}

pub type Params = IndexMap<String, Tensor<f32>>;

/// Checks that `grads` covers `params` with matching shapes and finite values.
pub(crate) fn validate_grads(params: &Params, grads: &Params) -> Result<(), OptimError> {
    for (name, p) in params {
        let g = grads
            .get(name)
            .ok_or_else(|| OptimError::MissingGradient(name.clone()))?;
        if g.shape() != p.shape() {
            return Err(OptimError::GradientShape {
                name: name.clone(),
                expected: p.shape().to_vec(),
                got: g.shape().to_vec(),
            });
        }
        if !g.all_finite() {
            return Err(OptimError::NonFiniteGradient(name.clone()));
        }
    }
    Ok(())
}

/// Plain SGD without momentum: `p <- p - lr * g`.
///
/// All gradients are validated before any parameter changes.
pub fn sgd_step(params: &mut Params, grads: &Params, lr: f64) -> Result<(), OptimError> {
    validate_grads(params, grads)?;
    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
            *w = (*w as f64 - lr * d as f64) as f32;
        }
    }
    Ok(())
}

/// Running arithmetic mean of flat parameter snapshots.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SwaAccumulator {
    running_mean: Vec<f64>,
    count: usize,
}

impl SwaAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn running_mean(&self) -> &[f64] {
        &self.running_mean
    }

    pub fn absorb(&mut self, snapshot: &[f32]) -> Result<(), OptimError> {
        if self.count == 0 {
            self.running_mean = snapshot.iter().map(|&v| v as f64).collect();
            self.count = 1;
            return Ok(());
        }
        if snapshot.len() != self.running_mean.len() {
            return Err(OptimError::SnapshotLength {
                expected: self.running_mean.len(),
                got: snapshot.len(),
            });
        }
        let c = self.count as f64;
        for (m, &s) in self.running_mean.iter_mut().zip(snapshot) {
            *m = (*m * c + s as f64) / (c + 1.0);
        }
        self.count += 1;
        Ok(())
    }

    /// The mean rounded to storage precision, or `None` before any snapshot.
    pub fn mean_f32(&self) -> Option<Vec<f32>> {
        (self.count > 0).then(|| self.running_mean.iter().map(|&v| v as f32).collect())
    }
}

/// Keeps the parameters of the epoch with the highest validation score.
#[derive(Clone, Debug)]
pub struct SelectionState<P> {
    best_mean_icc: f64,
    best: Option<P>,
    epoch_of_best: Option<usize>,
}

impl<P> Default for SelectionState<P> {
    fn default() -> Self {
        Self {
            best_mean_icc: f64::NEG_INFINITY,
            best: None,
            epoch_of_best: None,
        }
    }
}

impl<P> SelectionState<P> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces the stored best iff `mean_icc` is strictly greater, so ties
    /// keep the earlier epoch. Non-finite scores never win. `snapshot` is
    /// only called on replacement.
    pub fn offer(&mut self, epoch: usize, mean_icc: f64, snapshot: impl FnOnce() -> P) -> bool {
        if !mean_icc.is_finite() || mean_icc <= self.best_mean_icc {
            return false;
        }
        self.best_mean_icc = mean_icc;
        self.best = Some(snapshot());
        self.epoch_of_best = Some(epoch);
        true
    }

    pub fn best_mean_icc(&self) -> Option<f64> {
        self.best.as_ref().map(|_| self.best_mean_icc)
    }

    pub fn epoch_of_best(&self) -> Option<usize> {
        self.epoch_of_best
    }

    pub fn best(&self) -> Option<&P> {
        self.best.as_ref()
    }

    pub fn into_best(self) -> Option<P> {
        self.best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, v: Vec<f32>) -> Params {
        let n = v.len();
        IndexMap::from([(name.to_string(), Tensor::new(vec![n], v).unwrap())])
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let mut p = one("w", vec![1.0, -1.0]);
        sgd_step(&mut p, &one("w", vec![0.5, -2.0]), 0.1).unwrap();
        assert_eq!(p["w"].data(), &[0.95, -0.8]);
    }

    #[test]
    fn sgd_rejects_nan_without_touching_params() {
        let mut p = one("head0.bias", vec![1.0, 2.0]);
        let before = p.clone();
        let err = sgd_step(&mut p, &one("head0.bias", vec![0.0, f32::NAN]), 0.1).unwrap_err();
        assert_eq!(err, OptimError::NonFiniteGradient("head0.bias".into()));
        assert!(err.to_string().contains("head0.bias"));
        assert_eq!(p, before);
    }

    #[test]
    fn swa_single_and_pair() {
        let mut acc = SwaAccumulator::new();
        assert!(acc.mean_f32().is_none());
        acc.absorb(&[0.25, -3.5, 7.0]).unwrap();
        assert_eq!(acc.mean_f32().unwrap(), vec![0.25, -3.5, 7.0]);

        let mut acc = SwaAccumulator::new();
        acc.absorb(&[0.0; 4]).unwrap();
        acc.absorb(&[2.0; 4]).unwrap();
        assert_eq!(acc.mean_f32().unwrap(), vec![1.0; 4]);
        assert_eq!(acc.count(), 2);
    }

    #[test]
    fn swa_rejects_length_mismatch() {
        let mut acc = SwaAccumulator::new();
        acc.absorb(&[1.0, 2.0]).unwrap();
        assert_eq!(
            acc.absorb(&[1.0]),
            Err(OptimError::SnapshotLength { expected: 2, got: 1 })
        );
        assert_eq!(acc.count(), 1);
    }

    #[test]
    fn selection_examples() {
        let mut s = SelectionState::new();
        for (e, v) in [0.5, 0.7, 0.6].into_iter().enumerate() {
            s.offer(e, v, || e);
        }
        assert_eq!(s.epoch_of_best(), Some(1));
        assert_eq!(s.best(), Some(&1));

        let mut s = SelectionState::new();
        for e in 0..5 {
            s.offer(e, 0.4, || e);
        }
        assert_eq!(s.epoch_of_best(), Some(0));

        let mut s = SelectionState::new();
        for e in 0..5 {
            s.offer(e, e as f64 / 10.0, || e);
        }
        assert_eq!(s.epoch_of_best(), Some(4));
        assert_eq!(s.best_mean_icc(), Some(0.4));
    }

    #[test]
    fn selection_ignores_non_finite() {
        let mut s = SelectionState::new();
        assert!(!s.offer(0, f64::NAN, || 0));
        assert!(s.best().is_none());
        assert!(s.offer(1, -0.2, || 1));
        assert!(!s.offer(2, f64::INFINITY, || 2));
        assert_eq!(s.into_best(), Some(1));
    }
}
