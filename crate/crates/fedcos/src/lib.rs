//! Deterministic federated-optimization simulator.
//!
//! Implements FedCos — a cosine-similarity penalty that steers local client
//! training along the global model's recent direction — next to FedAvg,
//! FedProx, FedAvgM, and FedOpt baselines, with non-IID partitioners and a
//! per-round metrics pipeline for directional-inconsistency analysis and
//! communication-efficiency comparisons.
//!
//! Every run is bit-reproducible from its root seed, independent of worker
//! count.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod numkit;
pub mod objectives;
pub mod penalties;
pub mod scenes;
pub mod simulator;
pub mod strategies;

pub use error::{Error, Result};
pub use numkit::{ParamVector, SeedPath};
