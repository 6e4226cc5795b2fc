// Parameter layout and block plan shared by the builder and the forward pass.
//
// Entry names follow the 7-block structure: conv1, block1, block2_1,
// block2_2, block3_1, block3_2, fc.

use super::config::{Family, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Init {
    KaimingUniform { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Indices into the model's `ParameterSet`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvSlot {
    Standard { weight: usize },
    Separable { depthwise: usize, pointwise: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NormSlot {
    pub gamma: usize,
    pub beta: usize,
}

/// Parameters of one residual branch `f = Conv-Norm-ReLU-Conv-Norm`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchSlots {
    pub conv1: ConvSlot,
    pub norm1: NormSlot,
    pub conv2: ConvSlot,
    pub norm2: NormSlot,
    pub stride: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShortcutSlots {
    pub weight: usize,
    pub norm: NormSlot,
}

/// One of the seven top-level blocks, in execution order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlanBlock {
    Stem { conv: usize, norm: NormSlot },
    /// `blocks.len()` is `C` for resnet and 1 for the ode families.
    Stage { name: &'static str, blocks: Vec<BranchSlots> },
    Downsample { name: &'static str, branch: BranchSlots, shortcut: ShortcutSlots },
    Head { weight: usize, bias: usize },
}

#[derive(Default)]
struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, init });
        self.specs.len() - 1
    }

    fn conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize, separable: bool) -> ConvSlot {
        if separable {
            let depthwise = self.add(
                format!("{prefix}.depthwise.weight"),
                vec![cin, 1, k, k],
                Init::KaimingUniform { fan_in: k * k },
            );
            let pointwise = self.add(
                format!("{prefix}.pointwise.weight"),
                vec![cout, cin, 1, 1],
                Init::KaimingUniform { fan_in: cin },
            );
            ConvSlot::Separable { depthwise, pointwise }
        } else {
            let weight = self.add(
                format!("{prefix}.weight"),
                vec![cout, cin, k, k],
                Init::KaimingUniform { fan_in: cin * k * k },
            );
            ConvSlot::Standard { weight }
        }
    }

    fn norm(&mut self, prefix: &str, channels: usize) -> NormSlot {
        NormSlot {
            gamma: self.add(format!("{prefix}.gamma"), vec![channels], Init::Ones),
            beta: self.add(format!("{prefix}.beta"), vec![channels], Init::Zeros),
        }
    }

    fn branch(&mut self, prefix: &str, cin: usize, cout: usize, k: usize, stride: usize, separable: bool) -> BranchSlots {
        let conv1 = self.conv(&format!("{prefix}.conv1"), cin, cout, k, separable);
        let norm1 = self.norm(&format!("{prefix}.norm1"), cout);
        let conv2 = self.conv(&format!("{prefix}.conv2"), cout, cout, k, separable);
        let norm2 = self.norm(&format!("{prefix}.norm2"), cout);
        BranchSlots {
            conv1,
            norm1,
            conv2,
            norm2,
            stride,
        }
    }

    fn stage(&mut self, name: &'static str, width: usize, config: &ModelConfig) -> PlanBlock {
        let separable = config.family == Family::Dsodenet;
        let blocks = (0..config.blocks_per_stage())
            .map(|i| self.branch(&format!("{name}.{i}"), width, width, config.kernel_size, 1, separable))
            .collect();
        PlanBlock::Stage { name, blocks }
    }

    fn downsample(&mut self, name: &'static str, cin: usize, cout: usize, k: usize) -> PlanBlock {
        let branch = self.branch(name, cin, cout, k, 2, false);
        let weight = self.add(
            format!("{name}.shortcut.weight"),
            vec![cout, cin, 1, 1],
            Init::KaimingUniform { fan_in: cin },
        );
        let norm = self.norm(&format!("{name}.shortcut.norm"), cout);
        PlanBlock::Downsample {
            name,
            branch,
            shortcut: ShortcutSlots { weight, norm },
        }
    }
}

/// Block plan and parameter declarations for a (validated) config.
pub(crate) fn layout(config: &ModelConfig) -> (Vec<PlanBlock>, Vec<ParamSpec>) {
    let mut b = Builder::default();
    let [w1, w2, w3] = config.stage_channels;
    let k = config.kernel_size;
    let stem = match b.conv("conv1", config.in_channels, config.stem_channels, k, false) {
        ConvSlot::Standard { weight } => weight,
        ConvSlot::Separable { .. } => unreachable!(),
    };
    let stem_norm = b.norm("conv1.norm", config.stem_channels);
    let mut plan = vec![PlanBlock::Stem {
        conv: stem,
        norm: stem_norm,
    }];
    plan.push(b.stage("block1", w1, config));
    plan.push(b.downsample("block2_1", w1, w2, k));
    plan.push(b.stage("block2_2", w2, config));
    plan.push(b.downsample("block3_1", w2, w3, k));
    plan.push(b.stage("block3_2", w3, config));
    let weight = b.add(
        "fc.weight".into(),
        vec![config.num_classes, w3],
        Init::KaimingUniform { fan_in: w3 },
    );
    let bias = b.add("fc.bias".into(), vec![config.num_classes], Init::Zeros);
    plan.push(PlanBlock::Head { weight, bias });
    (plan, b.specs)
}
