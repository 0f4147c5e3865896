//! Command-line pipelines over the `ulkit` library.

pub mod args;
pub mod commands;
pub mod manifest;

use std::fmt;

use anyhow::Result;

pub use args::{Cli, Command};
pub use manifest::RunManifest;

/// Exit code for bad arguments or configuration.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for unreadable or invalid data and failed runs.
pub const EXIT_DATA: i32 = 1;

/// An argument combination that cannot run.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() || err.downcast_ref::<clap::Error>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<ulkit::Error>() {
        Some(ulkit::Error::Config(_)) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(UsageError("--jobs must be at least 1".into()).into());
        }
        // Fails only if a pool already exists, e.g. when called twice in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match &cli.command {
        Command::Synth(a) => commands::cmd_synth(a),
        Command::Train(a) => commands::cmd_train(a),
        Command::Generate(a) => commands::cmd_generate(a),
        Command::Evaluate(a) => commands::cmd_evaluate(a),
        Command::Dedup(a) => commands::cmd_dedup(a),
        Command::Scan(a) => commands::cmd_scan(a),
        Command::Bench(a) => commands::cmd_bench(a).map(|_| ()),
    }
}
