//! Closed-form parameter counting.
//!
//! Computed from the layer formulas (`N*M*K^2` for a standard convolution,
//! `N*K^2 + N*M` for a depthwise-separable one) without allocating tensors.

use super::config::{Family, ModelConfig};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParameterCount {
    pub total: usize,
    /// `(entry name, element count)` in canonical order.
    pub entries: Vec<(String, usize)>,
}

pub fn standard_conv_params(in_channels: usize, out_channels: usize, kernel: usize) -> usize {
    in_channels * out_channels * kernel * kernel
}

/// `(depthwise, pointwise)` element counts.
pub fn separable_conv_params(in_channels: usize, out_channels: usize, kernel: usize) -> (usize, usize) {
    (in_channels * kernel * kernel, in_channels * out_channels)
}

struct Counter {
    entries: Vec<(String, usize)>,
}

impl Counter {
    fn conv(&mut self, prefix: &str, n: usize, m: usize, k: usize, separable: bool) {
        if separable {
            let (dw, pw) = separable_conv_params(n, m, k);
            self.entries.push((format!("{prefix}.depthwise.weight"), dw));
            self.entries.push((format!("{prefix}.pointwise.weight"), pw));
        } else {
            self.entries.push((format!("{prefix}.weight"), standard_conv_params(n, m, k)));
        }
    }

    fn norm(&mut self, prefix: &str, c: usize) {
        self.entries.push((format!("{prefix}.gamma"), c));
        self.entries.push((format!("{prefix}.beta"), c));
    }

    fn branch(&mut self, prefix: &str, n: usize, m: usize, k: usize, separable: bool) {
        self.conv(&format!("{prefix}.conv1"), n, m, k, separable);
        self.norm(&format!("{prefix}.norm1"), m);
        self.conv(&format!("{prefix}.conv2"), m, m, k, separable);
        self.norm(&format!("{prefix}.norm2"), m);
    }
}

pub fn count_parameters(config: &ModelConfig) -> Result<ParameterCount> {
    config.validate()?;
    let k = config.kernel_size;
    let [w1, w2, w3] = config.stage_channels;
    let separable = config.family == Family::Dsodenet;
    let repeats = config.blocks_per_stage();
    let mut c = Counter { entries: Vec::new() };

    c.conv("conv1", config.in_channels, config.stem_channels, k, false);
    c.norm("conv1.norm", config.stem_channels);
    let stage = |c: &mut Counter, name: &str, w: usize| {
        for i in 0..repeats {
            c.branch(&format!("{name}.{i}"), w, w, k, separable);
        }
    };
    let down = |c: &mut Counter, name: &str, n: usize, m: usize| {
        c.branch(name, n, m, k, false);
        c.entries.push((format!("{name}.shortcut.weight"), n * m));
        c.norm(&format!("{name}.shortcut.norm"), m);
    };
    stage(&mut c, "block1", w1);
    down(&mut c, "block2_1", w1, w2);
    stage(&mut c, "block2_2", w2);
    down(&mut c, "block3_1", w2, w3);
    stage(&mut c, "block3_2", w3);
    c.entries.push(("fc.weight".into(), w3 * config.num_classes));
    c.entries.push(("fc.bias".into(), config.num_classes));

    Ok(ParameterCount {
        total: c.entries.iter().map(|(_, n)| n).sum(),
        entries: c.entries,
    })
}
