//! Experiment orchestration for the order-dispatching toolkit: config
//! handling, data generation, training, evaluation, ceilings and
//! comparison tables.

pub mod commands;
pub mod config;
mod error;
pub mod report;

pub use commands::{cmd_ceiling, cmd_compare, cmd_evaluate, cmd_gen_data, cmd_train, load_dataset, Layout};
pub use config::{CeilingKind, Config, Overrides};
pub use error::{CliError, CliResult};
