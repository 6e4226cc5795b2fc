use rand::seq::SliceRandom;

use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig};
use crate::rng;
use crate::tensor::{ops, sgd_step, ParameterSet, Tape, Tensor};

use super::aggregate::aggregate_weighted;
use super::config::FedDfOptions;

/// The server's distillation samples: a seeded shuffle of the pool truncated
/// to `budget` (the whole pool when `None`).
pub fn server_pool_indices(pool_len: usize, budget: Option<usize>, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pool_len).collect();
    idx.shuffle(&mut rng::stream(&[rng::TAG_POOL, seed]));
    idx.truncate(budget.unwrap_or(pool_len));
    idx
}

/// Mean over models of temperature-softened class probabilities, row-major `[B, classes]`.
pub fn ensemble_teacher(models: &[Model], x: &Tensor, temperature: f32) -> Result<Vec<f32>> {
    let mut acc: Option<Vec<f64>> = None;
    for model in models {
        let probs = ops::softmax(&model.forward(x, None)?, temperature)?;
        let acc = acc.get_or_insert_with(|| vec![0.0; probs.numel()]);
        for (a, &p) in acc.iter_mut().zip(probs.data()) {
            *a += p as f64;
        }
    }
    let acc = acc.ok_or_else(|| Error::invalid("models", "need at least one teacher"))?;
    let k = models.len() as f64;
    Ok(acc.into_iter().map(|a| (a / k) as f32).collect())
}

/// FedAvg initialization followed by `opts.steps` SGD steps distilling the
/// clients' averaged soft predictions into the global model.
///
/// Each teacher runs at its own iteration count. Returns the student
/// parameters and the pre-update KL divergence of every step.
#[allow(clippy::too_many_arguments)]
pub fn feddf_aggregate(
    locals: &[ParameterSet],
    counts: &[usize],
    client_iterations: &[usize],
    config: &ModelConfig,
    pool: &Dataset,
    samples: &[usize],
    opts: &FedDfOptions,
    seed: u64,
    round: usize,
) -> Result<(ParameterSet, Vec<f32>)> {
    if samples.is_empty() {
        return Err(Error::invalid("samples", "distillation needs a non-empty server sample pool"));
    }
    if client_iterations.len() != locals.len() {
        return Err(Error::invalid(
            "client_iterations",
            format!("{} iteration counts for {} clients", client_iterations.len(), locals.len()),
        ));
    }
    let init = aggregate_weighted(locals, counts)?;
    if opts.steps == 0 {
        return Ok((init, Vec::new()));
    }
    let teachers = locals
        .iter()
        .zip(client_iterations)
        .map(|(p, &c)| Model::with_params(&config.with_iterations(c), p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let stream = rng::mix(&[rng::TAG_DISTILL, seed, round as u64]);
    distill(config, init, &teachers, pool, samples, opts, stream)
}

/// `opts.steps` SGD steps on `KL(teacher || student)` over mini-batches of
/// `samples`, starting from `init`. Returns the student and the pre-update
/// KL of every step.
pub fn distill(
    config: &ModelConfig,
    init: ParameterSet,
    teachers: &[Model],
    pool: &Dataset,
    samples: &[usize],
    opts: &FedDfOptions,
    stream: u64,
) -> Result<(ParameterSet, Vec<f32>)> {
    if samples.is_empty() {
        return Err(Error::invalid("samples", "distillation needs a non-empty server sample pool"));
    }
    let mut student = Model::with_params(config, init)?;
    let per_epoch = samples.len().div_ceil(opts.batch_size);
    let mut history = Vec::with_capacity(opts.steps);
    let mut epoch_batches = None;
    for step in 0..opts.steps {
        if step % per_epoch == 0 {
            epoch_batches = Some(batches(pool, samples, opts.batch_size, stream, step / per_epoch)?);
        }
        let (x, _) = epoch_batches
            .as_mut()
            .and_then(Iterator::next)
            .expect("one batch per step within an epoch");
        let target = ensemble_teacher(teachers, &x, opts.temperature)?;
        let mut tape = Tape::new();
        let vars = student.bind(&mut tape, true);
        let xv = tape.constant(x);
        let logits = student.forward_on(&mut tape, xv, &vars, None)?;
        let kl = tape.softmax_kl(logits, &target, opts.temperature)?;
        tape.backward(kl)?;
        history.push(tape.value(kl).item()?);
        student.params_mut().accumulate_grads(&tape, &vars)?;
        sgd_step(student.params_mut(), opts.lr)?;
    }
    Ok((student.into_params(), history))
}
