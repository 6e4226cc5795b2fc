use crate::error::{Error, Result};
use crate::models::{count_parameters, ModelConfig};

/// Parameters travel as raw IEEE-754 single precision.
pub const BYTES_PER_PARAM: u64 = 4;
const MIB: f64 = (1u64 << 20) as f64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CommSize {
    pub params: u64,
    pub payload_bytes: u64,
    /// `payload_bytes / 2^20`.
    pub mib: f64,
}

pub fn communication_size_of(params: u64) -> CommSize {
    let payload_bytes = BYTES_PER_PARAM * params;
    CommSize {
        params,
        payload_bytes,
        mib: payload_bytes as f64 / MIB,
    }
}

pub fn communication_size(config: &ModelConfig) -> Result<CommSize> {
    Ok(communication_size_of(count_parameters(config)?.total as u64))
}

/// Percentage saved by sending `a` instead of `b`: `100 * (1 - size(a) / size(b))`.
pub fn reduction_ratio(a: &ModelConfig, b: &ModelConfig) -> Result<f64> {
    let sa = communication_size(a)?.payload_bytes;
    let sb = communication_size(b)?.payload_bytes;
    if sb == 0 {
        return Err(Error::invalid("b", "reference model has zero size"));
    }
    Ok(100.0 * (1.0 - sa as f64 / sb as f64))
}
