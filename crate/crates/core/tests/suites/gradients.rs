#![allow(dead_code)]

//! Finite-difference gradient checks shared by the `gradcheck` test target
//! and the acceptance suite: h = 1e-3 in f32, norm-relative error below
//! 1e-2, ten random shapes per operator. Each check panics on failure.

use crate::common::{gradcheck, rand_tensor, relu_margin};
use fedode_core::models::{
    ds_block_forward, ode_block_forward, res_block_forward, BlockVars, ConvVars, EulerMode,
};
use fedode_core::tensor::{Tape, Tensor, Var};

const TOL: f64 = 1e-2;
const CASES: u64 = 10;

fn dims(seed: u64) -> (usize, usize, usize) {
    (1 + (seed % 2) as usize, 1 + (seed % 3) as usize, 3 + (seed % 4) as usize)
}

fn check(name: &str, seed: u64, inputs: &[Tensor], op: impl Fn(&mut Tape, &[Var]) -> fedode_core::Result<Var>) {
    let err = gradcheck(inputs, seed, op);
    assert!(err < TOL, "{name} seed {seed}: relative error {err}");
}

/// Moves values away from the relu kink so central differences stay on one side.
fn away_from_zero(mut t: Tensor) -> Tensor {
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v = if *v < 0.0 { *v - 0.05 } else { *v + 0.05 };
        }
    }
    t
}

pub fn conv2d_gradients() {
    for seed in 0..CASES {
        let (b, c, h) = dims(seed);
        let k = [1, 3, 3, 5][seed as usize % 4];
        let stride = 1 + (seed as usize % 2);
        let pad = k / 2;
        let cout = 1 + (seed as usize % 3);
        let inputs = [
            rand_tensor(&[b, c, h + 2, h + 1], seed, 1.0),
            rand_tensor(&[cout, c, k, k], seed + 100, 1.0),
            rand_tensor(&[cout], seed + 200, 1.0),
        ];
        check("conv2d", seed, &inputs, |t, v| t.conv2d(v[0], v[1], Some(v[2]), stride, pad));
    }
}

pub fn depthwise_gradients() {
    for seed in 0..CASES {
        let (b, c, h) = dims(seed);
        let stride = 1 + (seed as usize % 2);
        let inputs = [
            rand_tensor(&[b, c, h + 2, h + 2], seed, 1.0),
            rand_tensor(&[c, 1, 3, 3], seed + 100, 1.0),
        ];
        check("depthwise", seed, &inputs, |t, v| t.depthwise_conv2d(v[0], v[1], stride, 1));
    }
}

pub fn pointwise_gradients() {
    for seed in 0..CASES {
        let (b, c, h) = dims(seed);
        let m = 1 + (seed as usize % 4);
        let inputs = [
            rand_tensor(&[b, c, h, h], seed, 1.0),
            rand_tensor(&[m, c, 1, 1], seed + 100, 1.0),
        ];
        check("pointwise", seed, &inputs, |t, v| t.pointwise_conv2d(v[0], v[1]));
    }
}

pub fn group_norm_gradients() {
    for seed in 0..CASES {
        let (b, _, h) = dims(seed);
        let groups = 1 + (seed as usize % 2);
        let c = groups * (1 + (seed as usize % 3));
        let inputs = [
            rand_tensor(&[b, c, h, h], seed, 2.0),
            rand_tensor(&[c], seed + 100, 1.5),
            rand_tensor(&[c], seed + 200, 1.0),
        ];
        check("group_norm", seed, &inputs, |t, v| t.group_norm(v[0], groups, v[1], v[2], 1e-5));
    }
}

pub fn relu_gradients() {
    for seed in 0..CASES {
        let (b, c, h) = dims(seed);
        let inputs = [away_from_zero(rand_tensor(&[b, c, h, h], seed, 1.0))];
        check("relu", seed, &inputs, |t, v| t.relu(v[0]));
    }
}

pub fn avg_pool_gradients() {
    for seed in 0..CASES {
        let (b, c, h) = dims(seed);
        let inputs = [rand_tensor(&[b, c, h, h + 1], seed, 1.0)];
        check("avg_pool_global", seed, &inputs, |t, v| t.avg_pool_global(v[0]));
    }
}

pub fn linear_gradients() {
    for seed in 0..CASES {
        let (b, f, o) = dims(seed);
        let inputs = [
            rand_tensor(&[b + 1, f + 2], seed, 1.0),
            rand_tensor(&[o, f + 2], seed + 100, 1.0),
            rand_tensor(&[o], seed + 200, 1.0),
        ];
        check("linear", seed, &inputs, |t, v| t.linear(v[0], v[1], v[2]));
    }
}

pub fn elementwise_gradients() {
    for seed in 0..CASES {
        let (b, c, h) = dims(seed);
        let shape = [b, c, h, 2];
        let inputs = [rand_tensor(&shape, seed, 1.0), rand_tensor(&shape, seed + 100, 1.0)];
        check("add", seed, &inputs, |t, v| t.add(v[0], v[1]));
        check("mul", seed, &inputs, |t, v| t.mul(v[0], v[1]));
        let s = 0.25 + seed as f32 * 0.3;
        check("scale", seed, &inputs[..1], |t, v| t.scale(v[0], s));
        check("sum", seed, &inputs[..1], |t, v| t.sum(v[0]));
    }
}

pub fn cross_entropy_gradients() {
    for seed in 0..CASES {
        let b = 1 + (seed as usize % 4);
        let k = 2 + (seed as usize % 5);
        let labels: Vec<usize> = (0..b).map(|i| (i * 7 + seed as usize) % k).collect();
        let inputs = [rand_tensor(&[b, k], seed, 3.0)];
        check("softmax_cross_entropy", seed, &inputs, |t, v| t.softmax_cross_entropy(v[0], &labels));
    }
}

pub fn soft_target_kl_gradients() {
    for seed in 0..CASES {
        let b = 1 + (seed as usize % 3);
        let k = 2 + (seed as usize % 4);
        let raw = rand_tensor(&[b, k], seed + 300, 2.0);
        let target = fedode_core::tensor::ops::softmax(&raw, 1.0).unwrap().into_data();
        let temperature = [1.0, 2.0, 3.0][seed as usize % 3];
        let inputs = [rand_tensor(&[b, k], seed, 3.0)];
        check("softmax_kl", seed, &inputs, |t, v| t.softmax_kl(v[0], &target, temperature));
    }
}

fn block_inputs(seed: u64, c: usize, separable: bool) -> Vec<Tensor> {
    let mut v = vec![rand_tensor(&[1, c, 3, 3], seed, 1.0)];
    for i in 0..2u64 {
        if separable {
            v.push(rand_tensor(&[c, 1, 3, 3], seed + 10 + i, 0.6));
            v.push(rand_tensor(&[c, c, 1, 1], seed + 20 + i, 0.6));
        } else {
            v.push(rand_tensor(&[c, c, 3, 3], seed + 10 + i, 0.4));
        }
        let gamma = rand_tensor(&[c], seed + 30 + i, 0.3).data().iter().map(|g| 1.0 + g).collect();
        v.push(Tensor::new(&[c], gamma).unwrap());
        v.push(rand_tensor(&[c], seed + 40 + i, 0.3));
    }
    v
}

fn block_vars(v: &[Var], separable: bool) -> BlockVars {
    let (conv1, n1, conv2, n2) = if separable {
        (
            ConvVars::Separable { depthwise: v[1], pointwise: v[2] },
            (v[3], v[4]),
            ConvVars::Separable { depthwise: v[5], pointwise: v[6] },
            (v[7], v[8]),
        )
    } else {
        (ConvVars::Standard(v[1]), (v[2], v[3]), ConvVars::Standard(v[4]), (v[5], v[6]))
    };
    BlockVars { conv1, norm1: n1, conv2, norm2: n2, stride: 1, padding: 1, groups: 2 }
}

/// Composite blocks have hidden relus whose inputs cannot be chosen
/// directly, so draws with a pre-activation within `MARGIN` of the kink are
/// skipped until `CASES` usable draws have been checked.
const MARGIN: f32 = 2e-2;

fn check_block(name: &str, separable: bool, forward: impl Fn(&mut Tape, &[Var]) -> fedode_core::Result<Var> + Copy) {
    let mut checked = 0;
    for seed in 0..500 * CASES {
        let c = 2 + 2 * (seed as usize % 2);
        let inputs = block_inputs(seed, c, separable);
        if relu_margin(&inputs, forward) < MARGIN {
            continue;
        }
        check(name, seed, &inputs, forward);
        checked += 1;
        if checked == CASES {
            return;
        }
    }
    panic!("{name}: only {checked} usable draws");
}

pub fn residual_block_gradients() {
    check_block("res_block", false, |t, v| res_block_forward(t, v[0], &block_vars(v, false)));
}

pub fn ode_block_gradients() {
    for iters in 1..=3 {
        check_block("ode_block", false, move |t, v| {
            ode_block_forward(t, v[0], &block_vars(v, false), iters, EulerMode::IntervalStep)
        });
    }
}

pub fn ds_block_gradients() {
    for iters in 1..=3 {
        check_block("ds_block", true, move |t, v| {
            ds_block_forward(t, v[0], &block_vars(v, true), iters, EulerMode::IntervalStep)
        });
    }
}

/// Every check, by name.
pub const ALL: &[(&str, fn())] = &[
    ("conv2d", conv2d_gradients),
    ("depthwise", depthwise_gradients),
    ("pointwise", pointwise_gradients),
    ("group_norm", group_norm_gradients),
    ("relu", relu_gradients),
    ("avg_pool", avg_pool_gradients),
    ("linear", linear_gradients),
    ("elementwise", elementwise_gradients),
    ("cross_entropy", cross_entropy_gradients),
    ("soft_target_kl", soft_target_kl_gradients),
    ("residual_block", residual_block_gradients),
    ("ode_block", ode_block_gradients),
    ("ds_block", ds_block_gradients),
];
