use rand::seq::index;

use crate::comms::serialized_len;
use crate::data::{Dataset, PartitionSpec};
use crate::error::{Error, Result};
use crate::exec;
use crate::models::{Model, ModelConfig};
use crate::rng;
use crate::tensor::ParameterSet;

use super::aggregate::aggregate_weighted;
use super::client::client_update;
use super::config::{Algorithm, ClientSpec, FedConfig, RoundMetrics};
use super::evaluate::evaluate;
use super::feddf::{feddf_aggregate, server_pool_indices};

/// Sorted ids of the `max(round(r * K), 1)` clients taking part in `round`.
pub fn sample_clients(clients: usize, fraction: f64, seed: u64, round: usize) -> Vec<usize> {
    let m = FedConfig::new(clients, fraction, 1, seed).clients_per_round();
    if m >= clients {
        return (0..clients).collect();
    }
    let mut rng = rng::stream(&[rng::TAG_SAMPLE, seed, round as u64]);
    let mut ids = index::sample(&mut rng, clients, m).into_vec();
    ids.sort_unstable();
    ids
}

#[derive(Clone, Debug)]
pub struct ClientResult {
    pub id: usize,
    pub params: ParameterSet,
    pub loss: f32,
}

/// Runs the local updates of one round, wherever the clients live.
pub trait RoundExecutor {
    /// Results must come back in `selected` order.
    fn run_round(
        &mut self,
        round: usize,
        global: &ParameterSet,
        selected: &[usize],
    ) -> Result<Vec<ClientResult>>;

    /// Called once after the last round.
    fn finish(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Clients simulated in this process, updated concurrently within a round.
pub struct InProcess<'a> {
    pub config: &'a ModelConfig,
    pub clients: &'a [ClientSpec],
    pub partition: &'a PartitionSpec,
    pub dataset: &'a Dataset,
    pub seed: u64,
}

impl RoundExecutor for InProcess<'_> {
    fn run_round(
        &mut self,
        round: usize,
        global: &ParameterSet,
        selected: &[usize],
    ) -> Result<Vec<ClientResult>> {
        let results = exec::map(selected, |&id| {
            let spec = &self.clients[id];
            client_update(
                global,
                self.config,
                spec,
                &self.partition.assignments[id],
                self.dataset,
                self.seed,
                round,
            )
            .map(|(params, loss)| ClientResult { id, params, loss })
            .map_err(|e| e.for_client(id))
        });
        results.into_iter().collect()
    }
}

/// Server-side view of a federation.
pub struct Federation<'a> {
    pub fed: &'a FedConfig,
    /// Global model config; evaluation runs at its iteration count.
    pub config: &'a ModelConfig,
    /// Iteration count of every client, by id.
    pub client_iterations: Vec<usize>,
    /// Sample count of every client, by id.
    pub client_counts: Vec<usize>,
    pub eval: &'a Dataset,
    /// Training set for the optional global training loss.
    pub train: Option<&'a Dataset>,
    /// Distillation pool for FedDF.
    pub server_pool: Option<&'a Dataset>,
}

/// Drives `fed.rounds` rounds: sample, local updates, aggregation,
/// evaluation. `on_round` sees each round's metrics as soon as they exist.
pub fn run_federation<E, F>(
    fed: &Federation,
    initial: ParameterSet,
    executor: &mut E,
    mut on_round: F,
) -> Result<(Vec<RoundMetrics>, ParameterSet)>
where
    E: RoundExecutor + ?Sized,
    F: FnMut(&RoundMetrics) -> Result<()>,
{
    let cfg = fed.fed;
    cfg.validate()?;
    if fed.client_iterations.len() != cfg.clients || fed.client_counts.len() != cfg.clients {
        return Err(Error::invalid(
            "clients",
            format!(
                "config declares {} clients, got {} iteration counts and {} sample counts",
                cfg.clients,
                fed.client_iterations.len(),
                fed.client_counts.len()
            ),
        ));
    }
    let pool_samples = match (cfg.algorithm, fed.server_pool) {
        (Algorithm::Feddf, Some(pool)) => server_pool_indices(pool.len(), cfg.feddf.budget, cfg.seed),
        (Algorithm::Feddf, None) => {
            return Err(Error::invalid("server_pool", "feddf needs a server sample pool"))
        }
        (Algorithm::Fedavg, _) => Vec::new(),
    };
    Model::with_params(fed.config, initial.clone())?;
    let message_bytes = serialized_len(&initial) as u64;

    let mut global = initial;
    let mut history = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let selected = sample_clients(cfg.clients, cfg.fraction, cfg.seed, round);
        let results = executor.run_round(round, &global, &selected)?;
        if results.iter().map(|r| r.id).ne(selected.iter().copied()) {
            return Err(Error::Protocol(format!("round {round}: results do not match selection")));
        }
        let counts: Vec<usize> = selected.iter().map(|&k| fed.client_counts[k]).collect();
        let client_losses = results.iter().map(|r| r.loss).collect();
        let locals: Vec<ParameterSet> = results.into_iter().map(|r| r.params).collect();
        global = match cfg.algorithm {
            Algorithm::Fedavg => aggregate_weighted(&locals, &counts)?,
            Algorithm::Feddf => {
                let iterations: Vec<usize> =
                    selected.iter().map(|&k| fed.client_iterations[k]).collect();
                let (params, kl) = feddf_aggregate(
                    &locals,
                    &counts,
                    &iterations,
                    fed.config,
                    fed.server_pool.expect("checked above"),
                    &pool_samples,
                    &cfg.feddf,
                    cfg.seed,
                    round,
                )?;
                if let (Some(a), Some(b)) = (kl.first(), kl.last()) {
                    log::debug!("round {round}: distillation KL {a:.5} -> {b:.5}");
                }
                params
            }
        };
        let eval = evaluate(&global, fed.config, None, fed.eval)?;
        let train_loss = match (cfg.track_train_loss, fed.train) {
            (true, Some(train)) => Some(evaluate(&global, fed.config, None, train)?.loss),
            _ => None,
        };
        let metrics = RoundMetrics {
            round,
            bytes: 2 * selected.len() as u64 * message_bytes,
            selected,
            client_losses,
            global_loss: eval.loss,
            top1: eval.top1,
            top5: eval.top5,
            train_loss,
        };
        log::info!(
            "round {round}: clients {:?} loss {:.4} top1 {:.4}",
            metrics.selected,
            metrics.global_loss,
            metrics.top1
        );
        on_round(&metrics)?;
        history.push(metrics);
    }
    executor.finish()?;
    Ok((history, global))
}

/// In-process federation from a fresh global model seeded by `fed.seed`.
pub fn run_fedavg(
    fed: &FedConfig,
    config: &ModelConfig,
    clients: &[ClientSpec],
    partition: &PartitionSpec,
    dataset: &Dataset,
    eval: &Dataset,
    server_pool: Option<&Dataset>,
) -> Result<Vec<RoundMetrics>> {
    if clients.len() != fed.clients || partition.clients() != fed.clients {
        return Err(Error::invalid(
            "clients",
            format!(
                "config declares {} clients, got {} specs and a {}-way partition",
                fed.clients,
                clients.len(),
                partition.clients()
            ),
        ));
    }
    if let Some((i, c)) = clients.iter().enumerate().find(|(i, c)| c.id != *i) {
        return Err(Error::invalid("clients", format!("spec at position {i} has id {}", c.id)));
    }
    let federation = Federation {
        fed,
        config,
        client_iterations: clients.iter().map(|c| c.iterations).collect(),
        client_counts: partition.client_counts.clone(),
        eval,
        train: Some(dataset),
        server_pool,
    };
    let initial = Model::build(config, fed.seed)?.into_params();
    let mut executor = InProcess {
        config,
        clients,
        partition,
        dataset,
        seed: fed.seed,
    };
    run_federation(&federation, initial, &mut executor, |_| Ok(())).map(|(m, _)| m)
}
