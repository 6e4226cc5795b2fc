//! ResNet / ODENet / dsODENet builders, block forward passes and counting.

pub mod blocks;
mod calibration;
mod config;
mod count;
mod depth;
mod layout;
mod model;

pub use blocks::{
    ds_block_forward, euler_integrate, ode_block_forward, res_block_forward, residual_branch,
    BlockVars, ConvVars, PostActivation,
};
pub use calibration::{calibrate_widths, Calibration, CalibrationGrid, TABLE7_DSODENET_PARAMS, TABLE7_ODENET_PARAMS};
pub use config::{EulerMode, Family, ModelConfig};
pub use count::{count_parameters, separable_conv_params, standard_conv_params, ParameterCount};
pub use depth::{depth_to_iterations, DepthMapping};
pub use layout::{BranchSlots, ConvSlot, NormSlot, PlanBlock, ShortcutSlots};
pub use model::{build_model, forward, Model};
pub use crate::tensor::ParameterSet;
