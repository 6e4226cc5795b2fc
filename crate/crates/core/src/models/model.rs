use rand::Rng;

use super::blocks::{self, BlockVars, ConvVars, NORM_EPS};
use super::config::{Family, ModelConfig};
use super::layout::{self, BranchSlots, ConvSlot, Init, PlanBlock};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{sgd_step, ParameterSet, Tape, Tensor, Var};

/// A configured network: its parameters and the 7-block execution plan.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParameterSet,
    plan: Vec<PlanBlock>,
}

/// Deterministic initialization: Kaiming-uniform (fan-in) weights, zero
/// biases / norm shifts, unit norm scales.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    Model::build(config, seed)
}

/// Logits for a batch, optionally overriding the iteration count.
pub fn forward(model: &Model, x: &Tensor, override_iterations: Option<usize>) -> Result<Tensor> {
    model.forward(x, override_iterations)
}

impl Model {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (plan, specs) = layout::layout(config);
        let mut rng = rng::stream(&[rng::TAG_INIT, seed]);
        let mut params = ParameterSet::new();
        for spec in specs {
            let numel: usize = spec.shape.iter().product();
            let data = match spec.init {
                Init::KaimingUniform { fan_in } => {
                    let bound = (6.0 / fan_in as f64).sqrt() as f32;
                    (0..numel)
                        .map(|_| (rng.random::<f32>() * 2.0 - 1.0) * bound)
                        .collect()
                }
                Init::Zeros => vec![0.0; numel],
                Init::Ones => vec![1.0; numel],
            };
            params.push(spec.name, Tensor::new(&spec.shape, data)?)?;
        }
        Ok(Model {
            config: config.clone(),
            params,
            plan,
        })
    }

    /// Wraps existing parameters; they must be shape-congruent with `config`.
    pub fn with_params(config: &ModelConfig, params: ParameterSet) -> Result<Self> {
        config.validate()?;
        let (plan, specs) = layout::layout(config);
        let mut expected = ParameterSet::new();
        for spec in specs {
            expected.push(spec.name, Tensor::zeros(&spec.shape))?;
        }
        expected.check_congruent(&params)?;
        Ok(Model {
            config: config.clone(),
            params,
            plan,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn into_params(self) -> ParameterSet {
        self.params
    }

    pub fn plan(&self) -> &[PlanBlock] {
        &self.plan
    }

    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Vec<Var> {
        self.params.bind(tape, requires_grad)
    }

    fn resolve_iterations(&self, override_iterations: Option<usize>) -> Result<usize> {
        match (self.config.family, override_iterations) {
            (Family::Resnet, Some(_)) => Err(Error::NotReiterable),
            (_, Some(0)) => Err(Error::invalid("override_iterations", "must be at least 1")),
            (_, Some(c)) => Ok(c),
            (_, None) => Ok(self.config.iterations),
        }
    }

    fn conv_vars(slot: ConvSlot, vars: &[Var]) -> ConvVars {
        match slot {
            ConvSlot::Standard { weight } => ConvVars::Standard(vars[weight]),
            ConvSlot::Separable { depthwise, pointwise } => ConvVars::Separable {
                depthwise: vars[depthwise],
                pointwise: vars[pointwise],
            },
        }
    }

    /// Tape handles for one branch of the plan.
    pub fn block_vars(&self, slots: &BranchSlots, vars: &[Var]) -> BlockVars {
        BlockVars {
            conv1: Self::conv_vars(slots.conv1, vars),
            norm1: (vars[slots.norm1.gamma], vars[slots.norm1.beta]),
            conv2: Self::conv_vars(slots.conv2, vars),
            norm2: (vars[slots.norm2.gamma], vars[slots.norm2.beta]),
            stride: slots.stride,
            padding: self.config.kernel_size / 2,
            groups: self.config.norm_groups,
        }
    }

    /// Runs the 7-block plan on `tape`; `vars` come from [`bind`](Self::bind).
    pub fn forward_on(
        &self,
        tape: &mut Tape,
        x: Var,
        vars: &[Var],
        override_iterations: Option<usize>,
    ) -> Result<Var> {
        let iterations = self.resolve_iterations(override_iterations)?;
        let [_, channels, _, _] = tape.value(x).dims4("forward", "input")?;
        if channels != self.config.in_channels {
            return Err(Error::shape(
                "forward",
                format!("input has {channels} channels, model expects {}", self.config.in_channels),
            ));
        }
        let padding = self.config.kernel_size / 2;
        let groups = self.config.norm_groups;
        let mut h = x;
        for block in &self.plan {
            h = match block {
                PlanBlock::Stem { conv, norm } => {
                    let y = tape.conv2d(h, vars[*conv], None, 1, padding)?;
                    let y = tape.group_norm(y, groups, vars[norm.gamma], vars[norm.beta], NORM_EPS)?;
                    tape.relu(y)?
                }
                PlanBlock::Stage { blocks: stage, .. } => match self.config.family {
                    Family::Resnet => {
                        let mut y = h;
                        for slots in stage {
                            y = blocks::res_block_forward(tape, y, &self.block_vars(slots, vars))?;
                        }
                        y
                    }
                    Family::Odenet => blocks::ode_block_forward(
                        tape,
                        h,
                        &self.block_vars(&stage[0], vars),
                        iterations,
                        self.config.euler_mode,
                    )?,
                    Family::Dsodenet => blocks::ds_block_forward(
                        tape,
                        h,
                        &self.block_vars(&stage[0], vars),
                        iterations,
                        self.config.euler_mode,
                    )?,
                },
                PlanBlock::Downsample { branch, shortcut, .. } => blocks::downsample_block_forward(
                    tape,
                    h,
                    &self.block_vars(branch, vars),
                    vars[shortcut.weight],
                    (vars[shortcut.norm.gamma], vars[shortcut.norm.beta]),
                )?,
                PlanBlock::Head { weight, bias } => {
                    let pooled = tape.avg_pool_global(h)?;
                    tape.linear(pooled, vars[*weight], vars[*bias])?
                }
            };
        }
        Ok(h)
    }

    /// Inference-only forward pass returning logits `[B, num_classes]`.
    pub fn forward(&self, x: &Tensor, override_iterations: Option<usize>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = self.forward_on(&mut tape, xv, &vars, override_iterations)?;
        Ok(tape.value(y).clone())
    }

    /// Mean cross-entropy on a batch, backpropagated into the parameter
    /// gradient buffers (accumulating). Returns the loss.
    pub fn accumulate_loss_grad(&mut self, images: &Tensor, labels: &[usize]) -> Result<f32> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, true);
        let x = tape.constant(images.clone());
        let logits = self.forward_on(&mut tape, x, &vars, None)?;
        let loss = tape.softmax_cross_entropy(logits, labels)?;
        tape.backward(loss)?;
        self.params.accumulate_grads(&tape, &vars)?;
        tape.value(loss).item()
    }

    /// One SGD step on a mini-batch; returns the pre-update batch loss.
    pub fn train_batch(&mut self, images: &Tensor, labels: &[usize], eta: f32) -> Result<f32> {
        let loss = self.accumulate_loss_grad(images, labels)?;
        sgd_step(&mut self.params, eta)?;
        Ok(loss)
    }
}
