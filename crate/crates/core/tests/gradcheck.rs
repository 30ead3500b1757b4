//! Finite-difference checks of every differentiable op on the tape.

mod common;

use common::gradcheck::{
    check, composite_case, passes_f32, passes_f64, random_case, EPS_F32, EPS_F64, OPS,
};

const SHAPES_PER_OP: u64 = 50;

fn run_f64(op: &str) {
    for seed in 0..SHAPES_PER_OP {
        let case = random_case::<f64>(op, seed);
        let r = check(&case, EPS_F64, seed + 1000);
        assert!(passes_f64(r), "{} (seed {seed}): {r:?}", case.name);
    }
}

fn run_f32(op: &str) {
    for seed in 0..SHAPES_PER_OP {
        let case = random_case::<f32>(op, seed);
        let r = check(&case, EPS_F32, seed + 1000);
        assert!(passes_f32(r), "{} (seed {seed}): {r:?}", case.name);
    }
}

macro_rules! gradcheck_tests {
    ($($name:ident => $op:literal),* $(,)?) => {
        mod f64_precision {
            $( #[test] fn $name() { super::run_f64($op); } )*
        }
        mod f32_precision {
            $( #[test] fn $name() { super::run_f32($op); } )*
        }
    };
}

gradcheck_tests! {
    conv3d => "conv3d",
    maxpool3d => "maxpool3d",
    linear => "linear",
    relu => "relu",
    softmax => "softmax",
    add => "add",
    global_avg_pool => "global_avg_pool",
    head_mix => "head_mix",
    mse_loss => "mse_loss",
}

#[test]
fn every_op_is_covered() {
    assert_eq!(OPS.len(), 9);
}

#[test]
fn composite_graph_f32() {
    for seed in 0..5 {
        let r = check(&composite_case::<f32>(seed), EPS_F32, seed);
        assert!(passes_f32(r), "seed {seed}: {r:?}");
    }
}

#[test]
fn composite_graph_f64() {
    for seed in 0..5 {
        let r = check(&composite_case::<f64>(seed), EPS_F64, seed);
        assert!(passes_f64(r), "seed {seed}: {r:?}");
    }
}
