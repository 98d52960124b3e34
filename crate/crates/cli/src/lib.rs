//! Front end of the superoptimizer: job configuration, the benchmark
//! corpus, report rendering and the subcommand implementations behind the
//! `superopt` binary.

pub mod config;
pub mod corpus;
pub mod commands;
pub mod report;
pub mod trace;
