//! Federated-learning workbench for weight-shared Neural-ODE networks.
//!
//! A single ODE block iterated `C` times with shared weights has the same
//! parameter shapes for every `C`, so FedAvg can average clients that run
//! different iteration counts. This crate contains everything needed to
//! exercise that property end to end:
//!
//! * [`tensor`]: dense `f32` tensors, a dynamic reverse-mode tape and SGD.
//! * [`models`]: ResNet / ODENet / dsODENet builders and parameter counting.
//! * [`data`]: CIFAR-10 binary loading, synthetic datasets and Dirichlet
//!   non-iid partitioning.
//! * [`federated`]: FedAvg and the FedDF distillation aggregator.
//! * [`comms`]: checkpoint format, communication-size accounting and a
//!   length-prefixed TCP transport.

pub mod comms;
pub mod data;
pub mod error;
pub mod exec;
pub mod federated;
pub mod models;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
