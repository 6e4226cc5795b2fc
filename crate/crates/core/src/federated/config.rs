use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One participant: its iteration count and local optimizer settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientSpec {
    pub id: usize,
    /// Iteration count the client trains with (may differ per client for ode families).
    pub iterations: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Fedavg,
    Feddf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FedDfOptions {
    /// Server samples available for distillation; `None` uses the whole pool.
    pub budget: Option<usize>,
    pub steps: usize,
    pub lr: f32,
    pub temperature: f32,
    pub batch_size: usize,
}

impl Default for FedDfOptions {
    fn default() -> Self {
        FedDfOptions {
            budget: None,
            steps: 50,
            lr: 0.05,
            temperature: 3.0,
            batch_size: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub clients: usize,
    pub fraction: f64,
    pub rounds: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub feddf: FedDfOptions,
    /// Also evaluate the global model on the full training set each round.
    pub track_train_loss: bool,
}

impl FedConfig {
    pub fn new(clients: usize, fraction: f64, rounds: usize, seed: u64) -> Self {
        FedConfig {
            clients,
            fraction,
            rounds,
            seed,
            algorithm: Algorithm::Fedavg,
            feddf: FedDfOptions::default(),
            track_train_loss: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::invalid("clients", "need at least one client"));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::invalid(
                "fraction",
                format!("must lie in (0, 1], got {}", self.fraction),
            ));
        }
        if self.rounds == 0 {
            return Err(Error::invalid("rounds", "must be at least 1"));
        }
        if self.algorithm == Algorithm::Feddf {
            let o = &self.feddf;
            if o.batch_size == 0 {
                return Err(Error::invalid("feddf.batch_size", "must be at least 1"));
            }
            if !(o.temperature > 0.0 && o.temperature.is_finite()) {
                return Err(Error::invalid("feddf.temperature", "must be positive"));
            }
            if !(o.lr >= 0.0 && o.lr.is_finite()) {
                return Err(Error::invalid("feddf.lr", "must be finite and non-negative"));
            }
        }
        Ok(())
    }

    /// Clients per round: `max(round(r * K), 1)`.
    pub fn clients_per_round(&self) -> usize {
        ((self.fraction * self.clients as f64).round() as usize).clamp(1, self.clients)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    /// 1-based round index.
    pub round: usize,
    pub selected: Vec<usize>,
    /// Final local loss per selected client, in `selected` order.
    pub client_losses: Vec<f32>,
    pub global_loss: f64,
    pub top1: f64,
    pub top5: f64,
    /// Global model loss on the training set, when tracked.
    pub train_loss: Option<f64>,
    /// Parameter bytes moved this round, downlink plus uplink.
    pub bytes: u64,
}

impl RoundMetrics {
    pub fn mean_client_loss(&self) -> f64 {
        let n = self.client_losses.len().max(1) as f64;
        self.client_losses.iter().map(|&l| l as f64).sum::<f64>() / n
    }
}
