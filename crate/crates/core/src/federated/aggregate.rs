use crate::error::{Error, Result};
use crate::exec;
use crate::tensor::{ParameterSet, Tensor};

const CHUNK: usize = 4096;

/// Sample-count weighted mean of client parameter sets, with weights
/// normalized over the participants.
///
/// Each element is accumulated in f64. The per-client terms are summed in
/// ascending order, so the result does not depend on the order of `locals`.
pub fn aggregate_weighted(locals: &[ParameterSet], counts: &[usize]) -> Result<ParameterSet> {
    let first = locals
        .first()
        .ok_or_else(|| Error::invalid("locals", "need at least one client"))?;
    if counts.len() != locals.len() {
        return Err(Error::invalid(
            "counts",
            format!("{} counts for {} clients", counts.len(), locals.len()),
        ));
    }
    if counts.contains(&0) {
        return Err(Error::invalid("counts", "every client needs a positive sample count"));
    }
    for (k, other) in locals.iter().enumerate().skip(1) {
        first.check_congruent(other).map_err(|e| e.for_client(k))?;
    }
    let total: usize = counts.iter().sum();
    let coeffs: Vec<f64> = counts.iter().map(|&n| n as f64 / total as f64).collect();

    let mut out = ParameterSet::new();
    for (i, (name, tensor)) in first.iter().enumerate() {
        let sources: Vec<&[f32]> = locals.iter().map(|p| p.tensor(i).data()).collect();
        let mut data = vec![0.0f32; tensor.numel()];
        exec::for_each_chunk(&mut data, CHUNK, |c, chunk| {
            let mut terms = vec![0.0f64; sources.len()];
            for (j, slot) in chunk.iter_mut().enumerate() {
                let e = c * CHUNK + j;
                for (t, (src, &w)) in terms.iter_mut().zip(sources.iter().zip(&coeffs)) {
                    *t = w * src[e] as f64;
                }
                terms.sort_unstable_by(f64::total_cmp);
                *slot = terms.iter().sum::<f64>() as f32;
            }
        });
        out.push(name, Tensor::new(tensor.shape(), data)?)?;
    }
    Ok(out)
}
