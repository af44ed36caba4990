//! Command-line harness: `posterior-mean`, `kbf`, `rate-study`, `gradcheck`.

mod config;
mod dispatch;

pub use config::{cli_definition, parse_config, parse_kv, Command, CommandSpec, Key, ParseOutcome, RunConfig, SEED_ENV};
pub use dispatch::{dispatch, exit_code, run, Artifacts, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, GRADCHECK_CSV_HEADER};
