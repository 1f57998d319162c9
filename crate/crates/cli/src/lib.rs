//! Orchestration behind the `pair` binary: simulation, fitting any method,
//! grid search, evaluation, replication studies and heatmap export.

pub mod commands;
pub mod config;
pub mod methods;
pub mod replicate;

pub use config::RunConfig;
