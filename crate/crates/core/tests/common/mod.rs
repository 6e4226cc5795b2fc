#![allow(dead_code)]

use fedode_core::rng;
use fedode_core::tensor::{Tape, Tensor, Var};
use fedode_core::Result;
use rand::Rng;

pub fn rand_tensor(shape: &[usize], seed: u64, scale: f32) -> Tensor {
    let mut r = rng::stream(&[0xC0FFEE, seed]);
    Tensor::from_fn(shape, |_| r.random_range(-scale..scale))
}

pub fn rand_vec(n: usize, seed: u64, scale: f32) -> Vec<f32> {
    let mut r = rng::stream(&[0xBEEF, seed]);
    (0..n).map(|_| r.random_range(-scale..scale)).collect()
}

/// Naive grouped cross-correlation with floor output extents.
pub fn naive_conv(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&[f32]>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Vec<f32> {
    let s = x.shape();
    let (b, cin, h, wd) = (s[0], s[1], s[2], s[3]);
    let ws = w.shape();
    let (cout, cpg, k) = (ws[0], ws[1], ws[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let opg = cout / groups;
    assert_eq!(cpg * groups, cin);
    let mut out = vec![0.0f32; b * cout * ho * wo];
    for n in 0..b {
        for o in 0..cout {
            let g = o / opg;
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = bias.map_or(0.0f64, |bb| bb[o] as f64);
                    for c in 0..cpg {
                        let ci = g * cpg + c;
                        for ki in 0..k {
                            for kj in 0..k {
                                let y = (i * stride + ki) as isize - pad as isize;
                                let xx = (j * stride + kj) as isize - pad as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((n * cin + ci) * h + y as usize) * wd + xx as usize];
                                let wv = w.data()[((o * cpg + c) * k + ki) * k + kj];
                                acc += xv as f64 * wv as f64;
                            }
                        }
                    }
                    out[((n * cout + o) * ho + i) * wo + j] = acc as f32;
                }
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

/// Builds `sum(op(inputs) * r)` for a fixed random `r` and compares the tape
/// gradient of every input with central differences (h = 1e-3).
/// Returns the worst norm-relative error over inputs.
pub fn gradcheck<F>(inputs: &[Tensor], seed: u64, op: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    gradcheck_with_step(inputs, seed, 1e-3, op)
}

pub fn gradcheck_with_step<F>(inputs: &[Tensor], seed: u64, h: f32, op: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor], weights: Option<&Tensor>| -> (f32, Tape, Vec<Var>, Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.param(t.clone())).collect();
        let out = op(&mut tape, &vars).expect("op forward");
        let loss = match weights {
            Some(r) => {
                let rv = tape.constant(r.clone());
                let m = tape.mul(out, rv).expect("mul");
                tape.sum(m).expect("sum")
            }
            None => out,
        };
        let l = tape.value(loss).item().expect("scalar");
        (l, tape, vars, loss)
    };
    let probe = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = op(&mut tape, &vars).expect("op forward");
        tape.value(out).shape().to_vec()
    };
    let weights = if probe.is_empty() {
        None
    } else {
        Some(rand_tensor(&probe, seed ^ 0x5151, 1.0))
    };
    let (_, mut tape, vars, loss) = eval(inputs, weights.as_ref());
    tape.backward(loss).expect("backward");
    let mut worst = 0.0f64;
    for (i, var) in vars.iter().enumerate() {
        let analytic = tape.grad(*var).expect("grad").to_vec();
        let mut numeric = Vec::with_capacity(analytic.len());
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let lp = eval(&plus, weights.as_ref()).0 as f64;
            let lm = eval(&minus, weights.as_ref()).0 as f64;
            numeric.push((lp - lm) / (2.0 * h as f64));
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(&a, &n)| (a as f64 - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na = analytic.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        worst = worst.max(diff / na.max(nn).max(1e-6));
    }
    worst
}

/// Smallest relu input magnitude when `op` runs on `inputs`.
pub fn relu_margin<F>(inputs: &[Tensor], op: F) -> f32
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    op(&mut tape, &vars).expect("op forward");
    tape.min_relu_input().unwrap_or(f32::INFINITY)
}
