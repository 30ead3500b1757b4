//! Checks on the softmax-weighted head mixture, shared by the nn tests and
//! the acceptance suite.

use herston::nn::{ModelState, NetworkSpec};
use herston::tensor::{softmax, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, sd: f32) -> Tensor<f32> {
    let n = shape.iter().product();
    let normal = Normal::new(0.0f32, sd).unwrap();
    Tensor::new(shape, (0..n).map(|_| normal.sample(rng)).collect()).unwrap()
}

/// A small randomly initialized model with random mixing logits.
fn random_model(rng: &mut ChaCha8Rng) -> ModelState {
    let m = rng.random_range(1..=6);
    let mut model = ModelState::build(NetworkSpec::desk(8, 2, m, 4), rng.random()).unwrap();
    let alpha = random_tensor(rng, model.alpha().shape().to_vec(), 3.0);
    *model.param_mut("alpha").unwrap() = alpha;
    model
}

/// Largest distance, over `draws` random model/batch pairs, by which a mixed
/// prediction falls outside the range of its per-head predictions.
pub fn worst_convexity_violation(draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let model = random_model(&mut rng);
        let n = rng.random_range(1..=3);
        let batch = random_tensor(&mut rng, vec![n, 1, 8, 8, 8], 1.0);
        let out = model.forward(&batch).unwrap();
        let (h, m) = (out.per_head.shape()[0], out.combined.shape()[1]);
        for i in 0..n {
            for j in 0..m {
                let vals: Vec<f32> = (0..h).map(|k| out.per_head.at(&[k, i, j])).collect();
                let lo = vals.iter().copied().fold(f32::INFINITY, f32::min) as f64;
                let hi = vals.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
                // f32 rounding of the weighted sum is allowed one ulp-scale slack.
                let slack = 4.0 * f32::EPSILON as f64 * lo.abs().max(hi.abs()).max(1.0);
                let c = out.combined.at(&[i, j]) as f64;
                worst = worst.max(lo - slack - c).max(c - hi - slack);
            }
        }
    }
    worst
}

/// Largest |Σ_h softmax(α)[h, m] − 1| over random logit matrices.
pub fn worst_softmax_column_error(draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let h = rng.random_range(1..=6);
        let m = rng.random_range(1..=12);
        let sd = [0.1, 1.0, 10.0, 50.0][rng.random_range(0..4)];
        let w = softmax(&random_tensor(&mut rng, vec![h, m], sd), 0).unwrap();
        for j in 0..m {
            let s: f64 = (0..h).map(|k| w.at(&[k, j]) as f64).sum();
            worst = worst.max((s - 1.0).abs());
        }
    }
    worst
}

/// With one head's logit far above the rest in every column, the mixture
/// must reproduce that head. Returns the largest deviation over all heads.
pub fn worst_saturation_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ModelState::build(NetworkSpec::desk(8, 2, 5, 4), seed).unwrap();
    let batch = random_tensor(&mut rng, vec![3, 1, 8, 8, 8], 1.0);
    let mut worst = 0.0f64;
    for chosen in 0..4 {
        let alpha = model.param_mut("alpha").unwrap();
        let m = alpha.shape()[1];
        for k in 0..4 {
            for j in 0..m {
                alpha.data_mut()[k * m + j] = if k == chosen { 50.0 } else { -50.0 };
            }
        }
        let out = model.forward(&batch).unwrap();
        for i in 0..3 {
            for j in 0..m {
                let d = (out.combined.at(&[i, j]) - out.per_head.at(&[chosen, i, j])).abs() as f64;
                worst = worst.max(d);
            }
        }
    }
    worst
}
