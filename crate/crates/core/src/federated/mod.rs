//! Federated averaging over heterogeneous-iteration clients, plus ensemble
//! distillation aggregation.

mod aggregate;
mod client;
mod config;
mod evaluate;
mod feddf;
mod run;

pub use aggregate::aggregate_weighted;
pub use client::client_update;
pub use config::{Algorithm, ClientSpec, FedConfig, FedDfOptions, RoundMetrics};
pub use evaluate::{evaluate, evaluate_logits, EvalResult};
pub use feddf::{distill, ensemble_teacher, feddf_aggregate, server_pool_indices};
pub use run::{
    run_fedavg, run_federation, sample_clients, ClientResult, Federation, InProcess, RoundExecutor,
};
