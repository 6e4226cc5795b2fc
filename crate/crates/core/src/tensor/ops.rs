//! Eager (tape-free) forms of the differentiable operators.
//!
//! Each call records a throwaway tape and returns the output value, so the
//! numbers are exactly those the tape produces during training.

use super::{Tape, Tensor};
use crate::error::Result;

fn unary(x: &Tensor, f: impl FnOnce(&mut Tape, super::Var) -> Result<super::Var>) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = f(&mut tape, v)?;
    Ok(tape.value(out).clone())
}

pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let w = tape.constant(weight.clone());
    let b = bias.map(|b| tape.constant(b.clone()));
    let y = tape.conv2d(x, w, b, stride, padding)?;
    Ok(tape.value(y).clone())
}

pub fn depthwise_conv2d(input: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let w = tape.constant(weight.clone());
    let y = tape.depthwise_conv2d(x, w, stride, padding)?;
    Ok(tape.value(y).clone())
}

pub fn pointwise_conv2d(input: &Tensor, weight: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let w = tape.constant(weight.clone());
    let y = tape.pointwise_conv2d(x, w)?;
    Ok(tape.value(y).clone())
}

pub fn group_norm(input: &Tensor, groups: usize, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let g = tape.constant(gamma.clone());
    let b = tape.constant(beta.clone());
    let y = tape.group_norm(x, groups, g, b, eps)?;
    Ok(tape.value(y).clone())
}

pub fn relu(x: &Tensor) -> Result<Tensor> {
    unary(x, |t, v| t.relu(v))
}

pub fn avg_pool_global(x: &Tensor) -> Result<Tensor> {
    unary(x, |t, v| t.avg_pool_global(v))
}

pub fn scale(x: &Tensor, factor: f32) -> Result<Tensor> {
    unary(x, |t, v| t.scale(v, factor))
}

pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let w = tape.constant(weight.clone());
    let b = tape.constant(bias.clone());
    let y = tape.linear(xv, w, b)?;
    Ok(tape.value(y).clone())
}

pub fn add(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let a = tape.constant(x.clone());
    let b = tape.constant(y.clone());
    let s = tape.add(a, b)?;
    Ok(tape.value(s).clone())
}

pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f32> {
    let mut tape = Tape::new();
    let z = tape.constant(logits.clone());
    let l = tape.softmax_cross_entropy(z, labels)?;
    tape.value(l).item()
}

/// Row-wise `softmax(logits / temperature)`.
pub fn softmax(logits: &Tensor, temperature: f32) -> Result<Tensor> {
    let [_, classes] = logits.dims2("softmax", "logits")?;
    Tensor::new(
        logits.shape(),
        super::kernels::softmax_rows(logits.data(), classes, temperature),
    )
}
