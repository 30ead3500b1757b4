use serde::{Deserialize, Serialize};

use super::PhantomError;

/// Per-measurement min-max normalization fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    names: Vec<String>,
    min: Vec<f64>,
    max: Vec<f64>,
}

impl Scaler {
    /// Fits on training rows only; each row holds one value per name.
    pub fn fit<'a>(names: &[String], rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self, PhantomError> {
        let m = names.len();
        let mut min = vec![f64::INFINITY; m];
        let mut max = vec![f64::NEG_INFINITY; m];
        let mut count = 0usize;
        for row in rows {
            if row.len() != m {
                return Err(PhantomError::Targets(format!(
                    "scaler row has {} values, expected {m}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(PhantomError::Targets(format!("non-finite value for {}", names[j])));
                }
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
            count += 1;
        }
        if count == 0 {
            return Err(PhantomError::Targets("cannot fit a scaler on zero rows".into()));
        }
        for j in 0..m {
            if max[j] <= min[j] {
                return Err(PhantomError::DegenerateMeasurement(names[j].clone()));
            }
        }
        Ok(Self {
            names: names.to_vec(),
            min,
            max,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// `(x - min) / (max - min)`, without clamping.
    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &x)| (x - self.min[j]) / (self.max[j] - self.min[j]))
            .collect()
    }

    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &y)| self.min[j] + y * (self.max[j] - self.min[j]))
            .collect()
    }
}
