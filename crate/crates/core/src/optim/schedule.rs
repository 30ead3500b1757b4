use serde::{Deserialize, Serialize};

use super::OptimError;

/// Linear decay from `lr_max` to `lr_min` over `cycle_len` steps, repeated
/// `n_cycles` times.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CyclicSchedule {
    lr_max: f64,
    lr_min: f64,
    cycle_len: usize,
    n_cycles: usize,
}

impl CyclicSchedule {
    pub fn new(lr_max: f64, lr_min: f64, cycle_len: usize, n_cycles: usize) -> Result<Self, OptimError> {
        if cycle_len < 2 {
            return Err(OptimError::CycleTooShort(cycle_len));
        }
        if !(lr_min > 0.0 && lr_min <= lr_max && lr_max.is_finite()) {
            return Err(OptimError::LearningRates { min: lr_min, max: lr_max });
        }
        Ok(Self {
            lr_max,
            lr_min,
            cycle_len,
            n_cycles,
        })
    }

    /// `epochs_per_cycle · ceil(n_train / batch_size)` steps per cycle.
    pub fn from_epochs(
        lr_max: f64,
        lr_min: f64,
        epochs_per_cycle: usize,
        n_train: usize,
        batch_size: usize,
        n_cycles: usize,
    ) -> Result<Self, OptimError> {
        let steps_per_epoch = n_train.div_ceil(batch_size.max(1));
        Self::new(lr_max, lr_min, epochs_per_cycle * steps_per_epoch, n_cycles)
    }

    pub fn lr_max(&self) -> f64 {
        self.lr_max
    }

    pub fn lr_min(&self) -> f64 {
        self.lr_min
    }

    pub fn cycle_len(&self) -> usize {
        self.cycle_len
    }

    pub fn n_cycles(&self) -> usize {
        self.n_cycles
    }

    pub fn total_steps(&self) -> usize {
        self.cycle_len * self.n_cycles
    }

    pub fn lr(&self, step: usize) -> f64 {
        let pos = step % self.cycle_len;
        // Endpoints are returned verbatim; the interior formula can be off
        // by an ulp at the cycle end.
        if pos == 0 {
            return self.lr_max;
        }
        if pos == self.cycle_len - 1 {
            return self.lr_min;
        }
        self.lr_max - (self.lr_max - self.lr_min) * pos as f64 / (self.cycle_len - 1) as f64
    }

    /// True on the last step of a cycle, where the rate reaches `lr_min`.
    pub fn is_cycle_end(&self, step: usize) -> bool {
        step % self.cycle_len == self.cycle_len - 1
    }
}

pub fn cyclic_lr(step: usize, sched: &CyclicSchedule) -> f64 {
    sched.lr(step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_periodicity() {
        let s = CyclicSchedule::new(1e-2, 1e-6, 40, 5).unwrap();
        assert_eq!(cyclic_lr(0, &s), 1e-2);
        assert_eq!(cyclic_lr(39, &s), 1e-6);
        assert_eq!(cyclic_lr(40, &s), 1e-2);
        assert!(s.is_cycle_end(39) && s.is_cycle_end(199) && !s.is_cycle_end(40));
        for step in 0..400 {
            let lr = s.lr(step);
            assert!((1e-6..=1e-2).contains(&lr));
            assert_eq!(lr, s.lr(step + 40));
        }
    }

    #[test]
    fn rejects_short_cycles() {
        assert_eq!(CyclicSchedule::new(1e-2, 1e-6, 1, 5), Err(OptimError::CycleTooShort(1)));
        assert!(CyclicSchedule::new(1e-2, 1e-6, 2, 5).is_ok());
        assert!(CyclicSchedule::new(1e-6, 1e-2, 10, 5).is_err());
    }

    #[test]
    fn four_epochs_in_steps() {
        // 60 training scans, batch 6: 10 steps per epoch.
        let s = CyclicSchedule::from_epochs(1e-2, 1e-6, 4, 60, 6, 5).unwrap();
        assert_eq!(s.cycle_len(), 40);
        let s = CyclicSchedule::from_epochs(1e-2, 1e-6, 4, 61, 6, 5).unwrap();
        assert_eq!(s.cycle_len(), 44);
        assert_eq!(s.total_steps(), 220);
    }
}
