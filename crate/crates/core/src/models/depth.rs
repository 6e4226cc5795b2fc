use crate::error::{Error, Result};

/// Nominal depth `N` mapped to an iteration count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DepthMapping {
    pub iterations: usize,
    /// `6C + 6`, the depth the chosen `C` actually realises.
    pub effective_depth: usize,
}

/// `C = round((N - 6) / 6)` with ties rounding up; `N >= 12`.
///
/// Named depths 34 / 50 / 101 map to C = 5 / 7 / 16.
pub fn depth_to_iterations(depth: usize) -> Result<DepthMapping> {
    if depth < 12 {
        return Err(Error::invalid("depth", format!("must be at least 12, got {depth}")));
    }
    // round-half-up of (N - 6) / 6 == floor((N - 6 + 3) / 6)
    let iterations = (depth - 3) / 6;
    Ok(DepthMapping {
        iterations,
        effective_depth: 6 * iterations + 6,
    })
}
