//! Central finite-difference oracle for tape gradients.
//!
//! The loss is `mse(op(inputs), R)` for a fixed random `R`. Numerical
//! derivatives re-run the whole forward graph with one input element nudged.

#![allow(dead_code)]

use herston::tensor::{Real, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type OpFn<T> = Box<dyn Fn(&mut Tape<T>, &[Var]) -> Var>;

pub struct Case<T: Real> {
    pub name: String,
    pub inputs: Vec<Tensor<T>>,
    pub op: OpFn<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct CheckResult {
    /// ‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)
    pub rel: f64,
    /// max |analytic − numeric|
    pub abs: f64,
}

fn loss<T: Real>(op: &OpFn<T>, inputs: &[Tensor<T>], target: &Tensor<T>, with_grad: bool) -> (f64, Vec<Tensor<T>>) {
    let mut tape = Tape::<T>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = op(&mut tape, &vars);
    let tgt = tape.constant(target.clone());
    let l = tape.mse_loss(out, tgt).expect("loss shape");
    let value = tape.value(l).data()[0].to_f64();
    if !with_grad {
        return (value, Vec::new());
    }
    let g = tape.backward(l).expect("scalar loss");
    (value, vars.iter().map(|&v| g.get(v)).collect())
}

fn output_shape<T: Real>(op: &OpFn<T>, inputs: &[Tensor<T>]) -> Vec<usize> {
    let mut tape = Tape::<T>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = op(&mut tape, &vars);
    tape.value(out).shape().to_vec()
}

pub fn check<T: Real>(case: &Case<T>, eps: f64, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = output_shape(&case.op, &case.inputs);
    let target = Tensor::from_fn(&shape, |_| T::from_f64(rng.random_range(-1.0..1.0)));
    let (_, analytic) = loss(&case.op, &case.inputs, &target, true);

    let (mut diff2, mut a2, mut n2, mut max_abs) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (i, input) in case.inputs.iter().enumerate() {
        for j in 0..input.len() {
            let mut plus = case.inputs.to_vec();
            let x = plus[i].data()[j].to_f64();
            plus[i].data_mut()[j] = T::from_f64(x + eps);
            let mut minus = case.inputs.to_vec();
            minus[i].data_mut()[j] = T::from_f64(x - eps);
            // Use the step actually representable in T.
            let h = plus[i].data()[j].to_f64() - minus[i].data()[j].to_f64();
            let (lp, _) = loss(&case.op, &plus, &target, false);
            let (lm, _) = loss(&case.op, &minus, &target, false);
            let numeric = (lp - lm) / h;
            let a = analytic[i].data()[j].to_f64();
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
            max_abs = max_abs.max((a - numeric).abs());
        }
    }
    let denom = a2.sqrt().max(n2.sqrt());
    CheckResult {
        rel: if denom > 0.0 { diff2.sqrt() / denom } else { diff2.sqrt() },
        abs: max_abs,
    }
}

pub const OPS: [&str; 9] = [
    "conv3d",
    "maxpool3d",
    "linear",
    "relu",
    "softmax",
    "add",
    "global_avg_pool",
    "head_mix",
    "mse_loss",
];

fn uniform<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(-1.0..1.0)))
}

/// Values bounded away from zero, so ReLU kinks sit far outside ±eps.
fn away_from_zero<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let mag = rng.random_range(0.05..1.0);
        T::from_f64(if rng.random_bool(0.5) { mag } else { -mag })
    })
}

/// Distinct values on a 0.01 grid, so pooling winners are stable under ±eps.
fn distinct<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - n as f64 * 0.005).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    Tensor::from_fn(shape, |i| T::from_f64(vals[i]))
}

/// Random small case for `op`, reproducible from `seed`.
pub fn random_case<T: Real>(op: &str, seed: u64) -> Case<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = |rng: &mut ChaCha8Rng, lo: usize, hi: usize| rng.random_range(lo..=hi);
    match op {
        "conv3d" => {
            let (n, c, o) = (r(&mut rng, 1, 2), r(&mut rng, 1, 3), r(&mut rng, 1, 3));
            let k = [1, 3][r(&mut rng, 0, 1)];
            let stride = r(&mut rng, 1, 2);
            let pad = if k == 3 { r(&mut rng, 0, 1) } else { 0 };
            let dims: Vec<usize> = (0..3).map(|_| r(&mut rng, 3, 5)).collect();
            let x = uniform(&mut rng, &[n, c, dims[0], dims[1], dims[2]]);
            let w = uniform(&mut rng, &[o, c, k, k, k]);
            let b = uniform(&mut rng, &[o]);
            Case {
                name: format!("conv3d x{:?} k{k} s{stride} p{pad} o{o}", x.shape()),
                inputs: vec![x, w, b],
                op: Box::new(move |t, v| t.conv3d(v[0], v[1], v[2], stride, pad).unwrap()),
            }
        }
        "maxpool3d" => {
            let (n, c) = (r(&mut rng, 1, 2), r(&mut rng, 1, 2));
            let k = r(&mut rng, 1, 2);
            let stride = r(&mut rng, 1, 2);
            let dims: Vec<usize> = (0..3).map(|_| r(&mut rng, 2, 5)).collect();
            let x = distinct(&mut rng, &[n, c, dims[0], dims[1], dims[2]]);
            Case {
                name: format!("maxpool3d x{:?} k{k} s{stride}", x.shape()),
                inputs: vec![x],
                op: Box::new(move |t, v| t.maxpool3d(v[0], k, stride).unwrap()),
            }
        }
        "linear" => {
            let (n, f, g) = (r(&mut rng, 1, 5), r(&mut rng, 1, 8), r(&mut rng, 1, 6));
            Case {
                name: format!("linear {n}x{f}x{g}"),
                inputs: vec![uniform(&mut rng, &[n, f]), uniform(&mut rng, &[f, g]), uniform(&mut rng, &[g])],
                op: Box::new(|t, v| t.linear(v[0], v[1], v[2]).unwrap()),
            }
        }
        "relu" => {
            let shape: Vec<usize> = (0..r(&mut rng, 1, 4)).map(|_| r(&mut rng, 1, 5)).collect();
            Case {
                name: format!("relu {shape:?}"),
                inputs: vec![away_from_zero(&mut rng, &shape)],
                op: Box::new(|t, v| t.relu(v[0])),
            }
        }
        "softmax" => {
            let shape: Vec<usize> = (0..r(&mut rng, 1, 3)).map(|_| r(&mut rng, 1, 5)).collect();
            let axis = r(&mut rng, 0, shape.len() - 1);
            Case {
                name: format!("softmax {shape:?} axis {axis}"),
                inputs: vec![uniform::<T>(&mut rng, &shape).map(|v| v * T::from_f64(3.0))],
                op: Box::new(move |t, v| t.softmax(v[0], axis).unwrap()),
            }
        }
        "add" => {
            let shape: Vec<usize> = (0..r(&mut rng, 1, 4)).map(|_| r(&mut rng, 1, 4)).collect();
            Case {
                name: format!("add {shape:?}"),
                inputs: vec![uniform(&mut rng, &shape), uniform(&mut rng, &shape)],
                op: Box::new(|t, v| t.add(v[0], v[1]).unwrap()),
            }
        }
        "global_avg_pool" => {
            let shape: Vec<usize> = (0..5).map(|_| r(&mut rng, 1, 4)).collect();
            Case {
                name: format!("global_avg_pool {shape:?}"),
                inputs: vec![uniform(&mut rng, &shape)],
                op: Box::new(|t, v| t.global_avg_pool(v[0]).unwrap()),
            }
        }
        "head_mix" => {
            let (h, n, m) = (r(&mut rng, 1, 4), r(&mut rng, 1, 4), r(&mut rng, 1, 5));
            let mut inputs = vec![uniform(&mut rng, &[h, m])];
            for _ in 0..h {
                inputs.push(uniform(&mut rng, &[n, m]));
            }
            Case {
                name: format!("head_mix h{h} n{n} m{m}"),
                inputs,
                op: Box::new(|t, v| t.head_mix(v[0], &v[1..]).unwrap()),
            }
        }
        "mse_loss" => {
            // Differentiate through both arguments of an inner mse.
            let (n, m) = (r(&mut rng, 1, 4), r(&mut rng, 1, 5));
            Case {
                name: format!("mse_loss {n}x{m}"),
                inputs: vec![uniform(&mut rng, &[n, m]), uniform(&mut rng, &[n, m])],
                op: Box::new(|t, v| t.mse_loss(v[0], v[1]).unwrap()),
            }
        }
        other => panic!("unknown op {other}"),
    }
}

/// conv3d → relu → global average pool → linear, the composite the
/// training graph is built from.
pub fn composite_case<T: Real>(seed: u64) -> Case<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut rng, &[2, 2, 5, 5, 5]);
    let w = uniform::<T>(&mut rng, &[3, 2, 3, 3, 3]).map(|v| v * T::from_f64(0.5));
    let b = uniform(&mut rng, &[3]);
    let fw = uniform(&mut rng, &[3, 4]);
    let fb = uniform(&mut rng, &[4]);
    Case {
        name: "conv3d-relu-gap-linear".into(),
        inputs: vec![x, w, b, fw, fb],
        op: Box::new(|t, v| {
            let c = t.conv3d(v[0], v[1], v[2], 1, 1).unwrap();
            let r = t.relu(c);
            let p = t.global_avg_pool(r).unwrap();
            t.linear(p, v[3], v[4]).unwrap()
        }),
    }
}

pub const TOL_F64_REL: f64 = 1e-6;
pub const TOL_F32_REL: f64 = 1e-2;
pub const TOL_F32_ABS: f64 = 1e-4;
pub const EPS_F64: f64 = 1e-6;
pub const EPS_F32: f64 = 1e-3;

pub fn passes_f64(r: CheckResult) -> bool {
    r.rel < TOL_F64_REL
}

pub fn passes_f32(r: CheckResult) -> bool {
    r.rel < TOL_F32_REL || r.abs < TOL_F32_ABS
}
