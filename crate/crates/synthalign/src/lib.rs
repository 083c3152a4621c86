//! Preference-data pipeline built on `synthalign-core`: the backend wire
//! protocol and gateway, a deterministic mock backend, the two-stage
//! orchestrator, the dataset store, analysis reports and the CLI.

pub mod config;
pub mod gateway;
pub mod mock;
pub mod protocol;
pub mod store;
pub mod orchestrator;
pub mod prompts;
pub mod reports;
pub mod verify;
pub mod cli;
