//! Width search matching published ODENet / dsODENet parameter totals.

use super::config::{Family, ModelConfig};
use super::count::count_parameters;
use crate::error::Result;

pub const TABLE7_ODENET_PARAMS: usize = 1_937_034;
pub const TABLE7_DSODENET_PARAMS: usize = 1_249_381;

/// Candidate widths and kernel sizes. The stem width always equals the first
/// stage width.
#[derive(Clone, Debug)]
pub struct CalibrationGrid {
    pub widths: Vec<usize>,
    pub kernel_sizes: Vec<usize>,
}

impl Default for CalibrationGrid {
    fn default() -> Self {
        CalibrationGrid {
            widths: (1..=64).map(|i| i * 8).collect(),
            kernel_sizes: vec![3, 5],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub config: ModelConfig,
    pub odenet_params: usize,
    pub dsodenet_params: usize,
    pub odenet_error: f64,
    pub dsodenet_error: f64,
}

impl Calibration {
    pub fn max_error(&self) -> f64 {
        self.odenet_error.max(self.dsodenet_error)
    }
}

fn rel(count: usize, target: usize) -> f64 {
    (count as f64 - target as f64).abs() / target as f64
}

/// Exhaustive search minimizing the larger of the two relative errors.
/// Widths that the base config's norm group count does not divide are skipped.
pub fn calibrate_widths(
    base: &ModelConfig,
    grid: &CalibrationGrid,
    odenet_target: usize,
    dsodenet_target: usize,
) -> Result<Option<Calibration>> {
    let mut best: Option<Calibration> = None;
    let usable: Vec<usize> = grid
        .widths
        .iter()
        .copied()
        .filter(|w| w % base.norm_groups == 0)
        .collect();
    for &k in &grid.kernel_sizes {
        for &w1 in &usable {
            for &w2 in &usable {
                for &w3 in &usable {
                    let mut config = base.with_widths([w1, w2, w3]);
                    config.kernel_size = k;
                    config.family = Family::Odenet;
                    let ode = count_parameters(&config)?.total;
                    let ode_err = rel(ode, odenet_target);
                    if best.as_ref().is_some_and(|b| ode_err >= b.max_error()) {
                        continue;
                    }
                    let ds = count_parameters(&config.with_family(Family::Dsodenet))?.total;
                    let candidate = Calibration {
                        config,
                        odenet_params: ode,
                        dsodenet_params: ds,
                        odenet_error: ode_err,
                        dsodenet_error: rel(ds, dsodenet_target),
                    };
                    if best.as_ref().is_none_or(|b| candidate.max_error() < b.max_error()) {
                        best = Some(candidate);
                    }
                }
            }
        }
    }
    Ok(best)
}
