use crate::data::{batches, Dataset};
use crate::error::Result;
use crate::models::{Model, ModelConfig};
use crate::rng;
use crate::tensor::ParameterSet;

use super::config::ClientSpec;
use super::evaluate::evaluate;

/// Local training: `epochs` passes of mini-batch SGD over the client's shard,
/// starting from a copy of `global`, using the client's own iteration count.
///
/// Returns the updated parameters and the mean batch loss of the last epoch
/// (with zero epochs, the loss of the received model on the shard).
pub fn client_update(
    global: &ParameterSet,
    config: &ModelConfig,
    client: &ClientSpec,
    shard: &[usize],
    dataset: &Dataset,
    seed: u64,
    round: usize,
) -> Result<(ParameterSet, f32)> {
    let local_config = config.with_iterations(client.iterations);
    let mut model = Model::with_params(&local_config, global.clone())?;
    if client.epochs == 0 {
        let subset = dataset.subset(shard)?;
        let eval = evaluate(model.params(), &local_config, None, &subset)?;
        return Ok((model.into_params(), eval.loss as f32));
    }
    let stream = rng::client_stream_seed(seed, client.id, round);
    let mut last = 0.0f64;
    for epoch in 0..client.epochs {
        let (mut sum, mut count) = (0.0f64, 0usize);
        for (x, y) in batches(dataset, shard, client.batch_size, stream, epoch)? {
            sum += model.train_batch(&x, &y, client.lr)? as f64;
            count += 1;
        }
        last = sum / count as f64;
        log::trace!("client {} round {round} epoch {epoch}: loss {last:.5}", client.id);
    }
    Ok((model.into_params(), last as f32))
}
