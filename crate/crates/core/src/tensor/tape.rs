//! Dynamic record-then-reverse tape.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for the backward pass. Nodes are appended in evaluation order, so
//! the tape is already topologically sorted and [`Tape::backward`] is a
//! single reverse sweep.
//!
//! Leaf gradients *accumulate* across `backward` calls until
//! [`Tape::zero_grads`] is called.

use super::kernels::{self, ConvGeometry, GroupNormCache};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    GroupNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        cache: GroupNormCache,
    },
    Relu {
        input: Var,
    },
    AvgPool {
        input: Var,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Add {
        lhs: Var,
        rhs: Var,
    },
    Mul {
        lhs: Var,
        rhs: Var,
    },
    Scale {
        input: Var,
        factor: f32,
    },
    Sum {
        input: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f32>,
    },
    SoftTargetKl {
        logits: Var,
        target: Vec<f32>,
        temperature: f32,
        probs: Vec<f32>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv { .. } => "conv2d",
            Op::GroupNorm { .. } => "group_norm",
            Op::Relu { .. } => "relu",
            Op::AvgPool { .. } => "avg_pool_global",
            Op::Linear { .. } => "linear",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Sum { .. } => "sum",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::SoftTargetKl { .. } => "softmax_kl",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Its gradient is tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, mut tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        tensor.clear_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].value.grad()
    }

    /// Smallest `|x|` over the inputs of every recorded relu, or `None`
    /// without relus. Finite-difference checks need this away from zero.
    pub fn min_relu_input(&self) -> Option<f32> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu { input } => Some(input),
                _ => None,
            })
            .flat_map(|v| self.nodes[v.0].value.data().iter().map(|x| x.abs()))
            .reduce(f32::min)
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn conv_impl(
        &mut self,
        op: &'static str,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let geom = ConvGeometry::new(
            op,
            x.dims4(op, "input")?,
            w.dims4(op, "weight")?,
            stride,
            padding,
            groups,
        )?;
        if let Some(b) = bias {
            let b = self.value(b);
            if b.shape() != [geom.out_channels] {
                return Err(Error::shape(
                    op,
                    format!("bias shape {:?} does not match {} output channels", b.shape(), geom.out_channels),
                ));
            }
        }
        let out = kernels::conv_forward(
            &geom,
            x.data(),
            w.data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(&geom.output_shape(), out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.push(
            value,
            Op::Conv {
                input,
                weight,
                bias,
                geom,
            },
            &inputs,
        )
    }

    /// Standard cross-correlation; weight is `[Cout, Cin, K, K]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        self.conv_impl("conv2d", input, weight, bias, stride, padding, 1)
    }

    /// Per-channel spatial convolution; weight is `[C, 1, K, K]`.
    pub fn depthwise_conv2d(
        &mut self,
        input: Var,
        weight: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let op = "depthwise_conv2d";
        let channels = self.value(input).dims4(op, "input")?[1];
        let w = self.value(weight).dims4(op, "weight")?;
        if w[0] != channels || w[1] != 1 {
            return Err(Error::shape(
                op,
                format!("weight must be [{channels}, 1, K, K], got {w:?}"),
            ));
        }
        self.conv_impl(op, input, weight, None, stride, padding, channels)
    }

    /// 1x1 channel mixing; weight is `[M, C, 1, 1]`.
    pub fn pointwise_conv2d(&mut self, input: Var, weight: Var) -> Result<Var> {
        let op = "pointwise_conv2d";
        let w = self.value(weight).dims4(op, "weight")?;
        if w[2] != 1 || w[3] != 1 {
            return Err(Error::shape(op, format!("weight must be [M, C, 1, 1], got {w:?}")));
        }
        self.conv_impl(op, input, weight, None, 1, 0, 1)
    }

    pub fn group_norm(
        &mut self,
        input: Var,
        groups: usize,
        gamma: Var,
        beta: Var,
        eps: f32,
    ) -> Result<Var> {
        let op = "group_norm";
        let dims = self.value(input).dims4(op, "input")?;
        let channels = dims[1];
        if groups == 0 || channels % groups != 0 {
            return Err(Error::shape(
                op,
                format!("{channels} channels are not divisible into {groups} groups"),
            ));
        }
        if !(eps > 0.0) {
            return Err(Error::invalid("eps", format!("must be positive, got {eps}")));
        }
        for (what, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [channels] {
                return Err(Error::shape(
                    op,
                    format!("{what} shape {:?} does not match {channels} channels", self.value(v).shape()),
                ));
            }
        }
        let (out, cache) = kernels::group_norm_forward(
            dims,
            groups,
            self.value(input).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let value = Tensor::new(&dims, out)?;
        self.push(
            value,
            Op::GroupNorm {
                input,
                gamma,
                beta,
                groups,
                cache,
            },
            &[input, gamma, beta],
        )
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(x.shape(), data)?;
        self.push(value, Op::Relu { input }, &[input])
    }

    /// Mean over the spatial extent: `[B, C, H, W] -> [B, C]`.
    pub fn avg_pool_global(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let [b, c, h, w] = x.dims4("avg_pool_global", "input")?;
        let plane = h * w;
        let data = x
            .data()
            .chunks(plane)
            .map(|p| p.iter().sum::<f32>() / plane as f32)
            .collect();
        let value = Tensor::new(&[b, c], data)?;
        self.push(value, Op::AvgPool { input }, &[input])
    }

    /// `x: [B, F]`, `weight: [O, F]`, `bias: [O]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let op = "linear";
        let [batch, features] = self.value(input).dims2(op, "input")?;
        let [outputs, wf] = self.value(weight).dims2(op, "weight")?;
        if wf != features {
            return Err(Error::shape(
                op,
                format!("weight has {wf} input features, input has {features}"),
            ));
        }
        if self.value(bias).shape() != [outputs] {
            return Err(Error::shape(
                op,
                format!("bias shape {:?} does not match {outputs} outputs", self.value(bias).shape()),
            ));
        }
        let y = kernels::linear_forward(
            batch,
            features,
            outputs,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new(&[batch, outputs], y)?;
        self.push(value, Op::Linear { input, weight, bias }, &[input, weight, bias])
    }

    fn same_shape(&self, op: &'static str, lhs: Var, rhs: Var) -> Result<()> {
        let (a, b) = (self.value(lhs).shape(), self.value(rhs).shape());
        if a != b {
            return Err(Error::shape(op, format!("operands have shapes {a:?} and {b:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.same_shape("add", lhs, rhs)?;
        let (a, b) = (self.value(lhs), self.value(rhs));
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(a.shape(), data)?;
        self.push(value, Op::Add { lhs, rhs }, &[lhs, rhs])
    }

    /// Elementwise product.
    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.same_shape("mul", lhs, rhs)?;
        let (a, b) = (self.value(lhs), self.value(rhs));
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(a.shape(), data)?;
        self.push(value, Op::Mul { lhs, rhs }, &[lhs, rhs])
    }

    pub fn scale(&mut self, input: Var, factor: f32) -> Result<Var> {
        let x = self.value(input);
        let data = x.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(x.shape(), data)?;
        self.push(value, Op::Scale { input, factor }, &[input])
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s = self.value(input).data().iter().map(|&v| v as f64).sum::<f64>();
        self.push(Tensor::scalar(s as f32), Op::Sum { input }, &[input])
    }

    /// Mean cross-entropy of `softmax(logits)` against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let op = "softmax_cross_entropy";
        let [batch, classes] = self.value(logits).dims2(op, "logits")?;
        if labels.len() != batch {
            return Err(Error::shape(
                op,
                format!("{} labels for a batch of {batch}", labels.len()),
            ));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let z = self.value(logits).data();
        let lse = kernels::log_sum_exp_rows(z, classes, 1.0);
        let loss = labels
            .iter()
            .enumerate()
            .map(|(b, &l)| lse[b] - z[b * classes + l] as f64)
            .sum::<f64>()
            / batch as f64;
        let probs = kernels::softmax_rows(z, classes, 1.0);
        self.push(
            Tensor::scalar(loss as f32),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Mean over the batch of `KL(target || softmax(logits / temperature))`.
    /// `target` rows are probability vectors and are treated as constants.
    pub fn softmax_kl(&mut self, logits: Var, target: &[f32], temperature: f32) -> Result<Var> {
        let op = "softmax_kl";
        let [batch, classes] = self.value(logits).dims2(op, "logits")?;
        if target.len() != batch * classes {
            return Err(Error::shape(
                op,
                format!("target has {} entries, logits {batch}x{classes}", target.len()),
            ));
        }
        if !(temperature > 0.0) {
            return Err(Error::invalid("temperature", format!("must be positive, got {temperature}")));
        }
        let z = self.value(logits).data();
        let lse = kernels::log_sum_exp_rows(z, classes, temperature);
        let mut kl = 0.0f64;
        for b in 0..batch {
            for c in 0..classes {
                let t = target[b * classes + c] as f64;
                if t > 0.0 {
                    let log_s = z[b * classes + c] as f64 / temperature as f64 - lse[b];
                    kl += t * (t.ln() - log_s);
                }
            }
        }
        let probs = kernels::softmax_rows(z, classes, temperature);
        self.push(
            Tensor::scalar((kl / batch as f64) as f32),
            Op::SoftTargetKl {
                logits,
                target: target.to_vec(),
                temperature,
                probs,
            },
            &[logits],
        )
    }

    /// Reverse sweep from a scalar `loss`, accumulating into leaf gradients.
    ///
    /// Every leaf that requires a gradient ends up with a gradient buffer,
    /// all-zero if it does not influence `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut adj: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        let mut leaf_grads: Vec<(usize, Vec<f32>)> = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let wants = |v: Var| self.nodes[v.0].requires_grad;
            let send = |v: Var, grad: Vec<f32>, adj: &mut Vec<Option<Vec<f32>>>| {
                match adj[v.0].as_mut() {
                    Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, b)| *a += b),
                    None => adj[v.0] = Some(grad),
                }
            };
            match &node.op {
                Op::Leaf => leaf_grads.push((i, g)),
                Op::Conv {
                    input,
                    weight,
                    bias,
                    geom,
                } => {
                    if wants(*input) {
                        let gi = kernels::conv_backward_input(geom, self.value(*weight).data(), &g);
                        send(*input, gi, &mut adj);
                    }
                    if wants(*weight) {
                        let gw = kernels::conv_backward_weight(geom, self.value(*input).data(), &g);
                        send(*weight, gw, &mut adj);
                    }
                    if let Some(b) = bias.filter(|b| wants(*b)) {
                        send(b, kernels::conv_backward_bias(geom, &g), &mut adj);
                    }
                }
                Op::GroupNorm {
                    input,
                    gamma,
                    beta,
                    groups,
                    cache,
                } => {
                    let dims = self.value(*input).dims4("group_norm", "input")?;
                    let (gi, gg, gb) = kernels::group_norm_backward(
                        dims,
                        *groups,
                        cache,
                        self.value(*gamma).data(),
                        &g,
                    );
                    if wants(*input) {
                        send(*input, gi, &mut adj);
                    }
                    if wants(*gamma) {
                        send(*gamma, gg, &mut adj);
                    }
                    if wants(*beta) {
                        send(*beta, gb, &mut adj);
                    }
                }
                Op::Relu { input } => {
                    let y = node.value.data();
                    let gi = g
                        .iter()
                        .zip(y)
                        .map(|(&gv, &yv)| if yv > 0.0 { gv } else { 0.0 })
                        .collect();
                    send(*input, gi, &mut adj);
                }
                Op::AvgPool { input } => {
                    let [_, _, h, w] = self.value(*input).dims4("avg_pool_global", "input")?;
                    let plane = h * w;
                    let gi = g
                        .iter()
                        .flat_map(|&gv| std::iter::repeat_n(gv / plane as f32, plane))
                        .collect();
                    send(*input, gi, &mut adj);
                }
                Op::Linear {
                    input,
                    weight,
                    bias,
                } => {
                    let [batch, features] = self.value(*input).dims2("linear", "input")?;
                    let outputs = self.value(*bias).numel();
                    let (gx, gw, gb) = kernels::linear_backward(
                        batch,
                        features,
                        outputs,
                        self.value(*input).data(),
                        self.value(*weight).data(),
                        &g,
                    );
                    if wants(*input) {
                        send(*input, gx, &mut adj);
                    }
                    if wants(*weight) {
                        send(*weight, gw, &mut adj);
                    }
                    if wants(*bias) {
                        send(*bias, gb, &mut adj);
                    }
                }
                Op::Add { lhs, rhs } => {
                    if wants(*lhs) {
                        send(*lhs, g.clone(), &mut adj);
                    }
                    if wants(*rhs) {
                        send(*rhs, g, &mut adj);
                    }
                }
                Op::Mul { lhs, rhs } => {
                    let (a, b) = (self.value(*lhs).data(), self.value(*rhs).data());
                    if wants(*lhs) {
                        send(*lhs, g.iter().zip(b).map(|(x, y)| x * y).collect(), &mut adj);
                    }
                    if wants(*rhs) {
                        send(*rhs, g.iter().zip(a).map(|(x, y)| x * y).collect(), &mut adj);
                    }
                }
                Op::Scale { input, factor } => {
                    send(*input, g.iter().map(|v| v * factor).collect(), &mut adj);
                }
                Op::Sum { input } => {
                    let n = self.value(*input).numel();
                    send(*input, vec![g[0]; n], &mut adj);
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let batch = labels.len();
                    let classes = probs.len() / batch;
                    let scale = g[0] / batch as f32;
                    let mut gl: Vec<f32> = probs.iter().map(|p| p * scale).collect();
                    for (b, &l) in labels.iter().enumerate() {
                        gl[b * classes + l] -= scale;
                    }
                    send(*logits, gl, &mut adj);
                }
                Op::SoftTargetKl {
                    logits,
                    target,
                    temperature,
                    probs,
                } => {
                    let [batch, _] = self.value(*logits).dims2("softmax_kl", "logits")?;
                    let scale = g[0] / (batch as f32 * temperature);
                    let gl = probs
                        .iter()
                        .zip(target)
                        .map(|(s, t)| (s - t) * scale)
                        .collect();
                    send(*logits, gl, &mut adj);
                }
            }
        }

        for (i, g) in leaf_grads {
            self.nodes[i].value.accumulate_grad(&g)?;
        }
        for node in &mut self.nodes[..=loss.0] {
            if node.requires_grad && matches!(node.op, Op::Leaf) && node.value.grad().is_none() {
                let zeros = vec![0.0; node.value.numel()];
                node.value.accumulate_grad(&zeros)?;
            }
        }
        Ok(())
    }
}
