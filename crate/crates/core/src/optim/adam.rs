use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{validate_grads, OptimError, Params};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are created lazily on the first step
/// and shaped like the parameters they track.
#[derive(Clone, Debug)]
pub struct AdamState {
    cfg: AdamConfig,
    t: u64,
    m: IndexMap<String, Tensor<f32>>,
    v: IndexMap<String, Tensor<f32>>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            t: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor<f32>> {
        self.m.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor<f32>> {
        self.v.get(name)
    }

    /// One update of every parameter in `params`. A non-finite gradient
    /// anywhere rejects the whole step before anything is modified.
    pub fn step(&mut self, params: &mut Params, grads: &Params) -> Result<(), OptimError> {
        validate_grads(params, grads)?;
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);

        for (name, p) in params.iter_mut() {
            let g = &grads[name];
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            let it = p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
                .zip(g.data());
            for (((w, mi), vi), &gi) in it {
                let gi = gi as f64;
                let mn = beta1 * *mi as f64 + (1.0 - beta1) * gi;
                let vn = beta2 * *vi as f64 + (1.0 - beta2) * gi * gi;
                *mi = mn as f32;
                *vi = vn as f32;
                let update = lr * (mn / bc1) / ((vn / bc2).sqrt() + eps);
                *w = (*w as f64 - update) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(name: &str, v: f32) -> Params {
        IndexMap::from([(name.to_string(), Tensor::new(vec![1], vec![v]).unwrap())])
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut p = scalar("w", 0.375);
        let mut adam = AdamState::new(AdamConfig::default());
        for _ in 0..50 {
            adam.step(&mut p, &scalar("w", 0.0)).unwrap();
        }
        assert_eq!(p["w"].data()[0], 0.375);
        assert_eq!(adam.step_count(), 50);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        for g in [0.3f32, -7.0] {
            let mut p = scalar("w", 1.0);
            let mut adam = AdamState::new(AdamConfig::default());
            adam.step(&mut p, &scalar("w", g)).unwrap();
            let moved = p["w"].data()[0] as f64 - 1.0;
            assert!((moved + 1e-4 * g.signum() as f64).abs() < 1e-7, "g={g} moved={moved}");
        }
    }

    #[test]
    fn quadratic_matches_reference_recursion() {
        // Independent scalar recursion in f64.
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let (mut w, mut m, mut v) = (0.0f64, 0.0, 0.0);
        for t in 1..=100 {
            let g = 2.0 * (w - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - f64::powi(b1, t));
            let vh = v / (1.0 - f64::powi(b2, t));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((w - 3.0).abs() < 0.1, "reference ended at {w}");

        let mut p = scalar("w", 0.0);
        let mut adam = AdamState::new(AdamConfig { lr, ..AdamConfig::default() });
        for _ in 0..100 {
            let g = 2.0 * (p["w"].data()[0] - 3.0);
            adam.step(&mut p, &scalar("w", g)).unwrap();
        }
        let got = p["w"].data()[0] as f64;
        assert!((got - 3.0).abs() < 0.1);
        assert!((got - w).abs() < 1e-3, "adam {got} vs reference {w}");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar("stage2.block0.conv1.weight", 1.0);
        let mut adam = AdamState::new(AdamConfig::default());
        let err = adam
            .step(&mut p, &scalar("stage2.block0.conv1.weight", f32::INFINITY))
            .unwrap_err();
        assert!(err.to_string().contains("stage2.block0.conv1.weight"));
        assert_eq!(adam.step_count(), 0);
        assert_eq!(p["stage2.block0.conv1.weight"].data()[0], 1.0);
    }

    #[test]
    fn moments_match_parameter_shapes() {
        let mut p: Params = IndexMap::from([("k".to_string(), Tensor::zeros(&[2, 1, 3, 3, 3]))]);
        let g: Params = IndexMap::from([("k".to_string(), Tensor::full(&[2, 1, 3, 3, 3], 0.5))]);
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut p, &g).unwrap();
        assert_eq!(adam.first_moment("k").unwrap().shape(), &[2, 1, 3, 3, 3]);
        assert_eq!(adam.second_moment("k").unwrap().shape(), &[2, 1, 3, 3, 3]);
    }
}
