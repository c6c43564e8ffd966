//! Library side of the `pgkit` command: config parsing and the subcommands.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{
    bench_matrix, cmd_bench, cmd_oracle, cmd_run, cmd_simulate, execute, load_data, run_bench, simulate_data,
    write_bench_csv, BenchReport, BenchRow, RunOutput, RunReport, RunSummary,
};
pub use config::{seed_override, ModelSpec, RawConfig, RunConfig, Sampler};
pub use error::CliError;
