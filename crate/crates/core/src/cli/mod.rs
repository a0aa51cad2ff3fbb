//! Command-line front end: run configs, trajectory CSV ingestion, and the
//! `generate`, `recover`, `predict`, `sweep`, `audit`, `mitigate` and
//! `lyapunov` subcommands.

mod commands;
mod config;
mod io;

pub use commands::run_command;
pub use config::{parse_config, MitigationConfig, PriorSpec, RunConfig, DEFAULT_OUTPUT_DIR, OUTPUT_ENV};
pub use io::{
    ingest_trajectories, ingest_with_ids, read_metadata, read_trajectories_csv, write_metadata,
    write_trajectories_csv, TrajectoryMetadata, TrajectoryTable,
};
