//! Residual, ODE and depthwise-separable ODE blocks on a [`Tape`].

use super::config::EulerMode;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

pub const NORM_EPS: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvVars {
    Standard(Var),
    Separable { depthwise: Var, pointwise: Var },
}

impl ConvVars {
    pub fn is_separable(&self) -> bool {
        matches!(self, ConvVars::Separable { .. })
    }
}

/// Tape handles for one residual branch plus its static settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockVars {
    pub conv1: ConvVars,
    pub norm1: (Var, Var),
    pub conv2: ConvVars,
    pub norm2: (Var, Var),
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

pub fn apply_conv(tape: &mut Tape, x: Var, conv: ConvVars, stride: usize, padding: usize) -> Result<Var> {
    match conv {
        ConvVars::Standard(w) => tape.conv2d(x, w, None, stride, padding),
        ConvVars::Separable { depthwise, pointwise } => {
            let d = tape.depthwise_conv2d(x, depthwise, stride, padding)?;
            tape.pointwise_conv2d(d, pointwise)
        }
    }
}

/// `f(x) = Norm(Conv(ReLU(Norm(Conv(x)))))`.
pub fn residual_branch(tape: &mut Tape, x: Var, block: &BlockVars) -> Result<Var> {
    let h = apply_conv(tape, x, block.conv1, block.stride, block.padding)?;
    let h = tape.group_norm(h, block.groups, block.norm1.0, block.norm1.1, NORM_EPS)?;
    let h = tape.relu(h)?;
    let h = apply_conv(tape, h, block.conv2, 1, block.padding)?;
    tape.group_norm(h, block.groups, block.norm2.0, block.norm2.1, NORM_EPS)
}

fn check_identity_block(tape: &Tape, x: Var, block: &BlockVars) -> Result<()> {
    if block.stride != 1 {
        return Err(Error::shape("residual block", "identity-shortcut blocks must have stride 1"));
    }
    let channels = tape.value(x).dims4("residual block", "input")?[1];
    let width = match block.conv1 {
        ConvVars::Standard(w) => tape.value(w).shape()[1],
        ConvVars::Separable { depthwise, .. } => tape.value(depthwise).shape()[0],
    };
    if channels != width {
        return Err(Error::shape(
            "residual block",
            format!("input has {channels} channels, block expects {width}"),
        ));
    }
    Ok(())
}

/// `y = relu(x + f(x))`.
pub fn res_block_forward(tape: &mut Tape, x: Var, block: &BlockVars) -> Result<Var> {
    check_identity_block(tape, x, block)?;
    let f = residual_branch(tape, x, block)?;
    let s = tape.add(x, f)?;
    tape.relu(s)
}

/// Activation applied after every Euler update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PostActivation {
    None,
    Relu,
}

/// Explicit Euler: `x <- post(x + h * f(x))`, `iterations` times.
///
/// `h` comes from `mode`; a unit step skips the scaling so the update is
/// bit-identical to a residual block.
pub fn euler_integrate<F>(
    tape: &mut Tape,
    x: Var,
    iterations: usize,
    mode: EulerMode,
    post: PostActivation,
    mut f: F,
) -> Result<Var>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    if iterations == 0 {
        return Err(Error::invalid("iterations", "must be at least 1"));
    }
    let h = mode.step(iterations);
    let mut state = x;
    for _ in 0..iterations {
        let mut delta = f(tape, state)?;
        if h != 1.0 {
            delta = tape.scale(delta, h)?;
        }
        state = tape.add(state, delta)?;
        if post == PostActivation::Relu {
            state = tape.relu(state)?;
        }
    }
    Ok(state)
}

/// One shared-weight block executed `iterations` times.
pub fn ode_block_forward(
    tape: &mut Tape,
    x: Var,
    block: &BlockVars,
    iterations: usize,
    mode: EulerMode,
) -> Result<Var> {
    check_identity_block(tape, x, block)?;
    euler_integrate(tape, x, iterations, mode, PostActivation::Relu, |t, s| {
        residual_branch(t, s, block)
    })
}

/// [`ode_block_forward`] for blocks whose convolutions are depthwise-separable.
pub fn ds_block_forward(
    tape: &mut Tape,
    x: Var,
    block: &BlockVars,
    iterations: usize,
    mode: EulerMode,
) -> Result<Var> {
    if !(block.conv1.is_separable() && block.conv2.is_separable()) {
        return Err(Error::shape(
            "ds_block_forward",
            "block convolutions must be depthwise-separable",
        ));
    }
    ode_block_forward(tape, x, block, iterations, mode)
}

/// Strided block: `relu(Norm(Conv1x1_s2(x)) + f(x))`. Executed once in every family.
pub fn downsample_block_forward(
    tape: &mut Tape,
    x: Var,
    block: &BlockVars,
    shortcut_weight: Var,
    shortcut_norm: (Var, Var),
) -> Result<Var> {
    let f = residual_branch(tape, x, block)?;
    let s = tape.conv2d(x, shortcut_weight, None, block.stride, 0)?;
    let s = tape.group_norm(s, block.groups, shortcut_norm.0, shortcut_norm.1, NORM_EPS)?;
    let sum = tape.add(s, f)?;
    tape.relu(sum)
}
