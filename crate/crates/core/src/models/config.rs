use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// `C` physically stacked residual blocks per stage.
    Resnet,
    /// One residual block per stage, executed `C` times.
    Odenet,
    /// As `Odenet`, with depthwise-separable convolutions inside the iterated blocks.
    Dsodenet,
}

impl Family {
    pub fn is_ode(self) -> bool {
        !matches!(self, Family::Resnet)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Resnet => "resnet",
            Family::Odenet => "odenet",
            Family::Dsodenet => "dsodenet",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resnet" => Ok(Family::Resnet),
            "odenet" => Ok(Family::Odenet),
            "dsodenet" => Ok(Family::Dsodenet),
            other => Err(Error::config("family", format!("unknown family `{other}`"))),
        }
    }
}

/// Euler step size used by the iterated blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EulerMode {
    /// `h = 1`; one iteration is exactly one residual block.
    UnitStep,
    /// `h = 1/C`; every `C` integrates the same interval `[0, 1]`.
    #[default]
    IntervalStep,
}

impl EulerMode {
    pub fn step(self, iterations: usize) -> f32 {
        match self {
            EulerMode::UnitStep => 1.0,
            EulerMode::IntervalStep => 1.0 / iterations as f32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    pub in_channels: usize,
    /// Width after the stem convolution; must equal `stage_channels[0]`.
    pub stem_channels: usize,
    pub stage_channels: [usize; 3],
    /// `C`: blocks per stage (resnet) or executions of the shared block (ode families).
    pub iterations: usize,
    pub kernel_size: usize,
    pub num_classes: usize,
    pub norm_groups: usize,
    pub euler_mode: EulerMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            family: Family::Odenet,
            in_channels: 3,
            stem_channels: 64,
            stage_channels: [64, 128, 256],
            iterations: 7,
            kernel_size: 3,
            num_classes: 10,
            norm_groups: 8,
            euler_mode: EulerMode::IntervalStep,
        }
    }
}

impl ModelConfig {
    pub fn new(family: Family, iterations: usize) -> Self {
        ModelConfig {
            family,
            iterations,
            ..Default::default()
        }
    }

    /// Small widths for desk-scale experiments.
    pub fn tiny(family: Family, iterations: usize, num_classes: usize) -> Self {
        ModelConfig {
            family,
            iterations,
            num_classes,
            stem_channels: 8,
            stage_channels: [8, 16, 32],
            norm_groups: 4,
            ..Default::default()
        }
    }

    pub fn with_iterations(&self, iterations: usize) -> Self {
        ModelConfig {
            iterations,
            ..self.clone()
        }
    }

    pub fn with_family(&self, family: Family) -> Self {
        ModelConfig {
            family,
            ..self.clone()
        }
    }

    pub fn with_widths(&self, stages: [usize; 3]) -> Self {
        ModelConfig {
            stem_channels: stages[0],
            stage_channels: stages,
            ..self.clone()
        }
    }

    /// Physically distinct blocks per iterated stage.
    pub fn blocks_per_stage(&self) -> usize {
        if self.family.is_ode() {
            1
        } else {
            self.iterations
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &'static str, v: usize| {
            if v == 0 {
                Err(Error::config(field, "must be at least 1"))
            } else {
                Ok(())
            }
        };
        positive("in_channels", self.in_channels)?;
        positive("stem_channels", self.stem_channels)?;
        positive("iterations", self.iterations)?;
        positive("num_classes", self.num_classes)?;
        positive("norm_groups", self.norm_groups)?;
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::config(
                "kernel_size",
                format!("must be odd so padding preserves extents, got {}", self.kernel_size),
            ));
        }
        if self.stage_channels.contains(&0) {
            return Err(Error::config("stage_channels", "widths must be at least 1"));
        }
        if self.stem_channels != self.stage_channels[0] {
            return Err(Error::config(
                "stem_channels",
                format!(
                    "must equal stage_channels[0] ({}) because block1 preserves width, got {}",
                    self.stage_channels[0], self.stem_channels
                ),
            ));
        }
        if let Some(w) = self.stage_channels.iter().find(|&&w| w % self.norm_groups != 0) {
            return Err(Error::config(
                "norm_groups",
                format!("{} groups do not divide width {w}", self.norm_groups),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::tiny(Family::Dsodenet, 3, 4).validate().unwrap();
    }

    #[test]
    fn validation_names_field() {
        let mut c = ModelConfig::default();
        c.norm_groups = 7;
        assert!(matches!(c.validate(), Err(Error::Config { field: "norm_groups", .. })));
        let mut c = ModelConfig::default();
        c.iterations = 0;
        assert!(matches!(c.validate(), Err(Error::Config { field: "iterations", .. })));
        let mut c = ModelConfig::default();
        c.stem_channels = 32;
        assert!(matches!(c.validate(), Err(Error::Config { field: "stem_channels", .. })));
        let mut c = ModelConfig::default();
        c.kernel_size = 4;
        assert!(matches!(c.validate(), Err(Error::Config { field: "kernel_size", .. })));
    }

    #[test]
    fn euler_steps() {
        assert_eq!(EulerMode::UnitStep.step(4), 1.0);
        assert_eq!(EulerMode::IntervalStep.step(4), 0.25);
    }
}
