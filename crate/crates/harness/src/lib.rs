//! Experiment harness for the bandit convex optimization library: JSON
//! experiment configs, replicated runs with per-replica trace CSVs and a
//! summary JSON, one-axis sweeps, and CLI self-diagnostics.

pub mod config;
pub mod diag;
pub mod experiment;
