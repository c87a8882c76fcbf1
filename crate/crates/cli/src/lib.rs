//! `gridpop` command-line driver.
//!
//! Every subcommand reads and writes a work directory:
//!
//! ```text
//! work/
//!   sites/<site>.json            grid, inputs and digests from `tile`
//!   sites/<site>.geojson         valid footprints (+ .crs.json)
//!   sites/<site>.ingest.log      rejected features, one per line
//!   tiles/<site>_<row>_<col>.png resampled tiles
//!   masks/...                    optional coverage masks from `label`
//!   manifest.jsonl               labeled tiles
//!   class_balance.json
//!   model.txt, metrics.json      from `train`
//!   population/<site>.csv        from `popmap`
//!   runs/<command>.json          run records
//! ```

mod args;
mod commands;
mod error;
mod record;
mod settings;
mod staging;
mod workdir;

use std::ffi::OsString;

use clap::Parser;

pub use args::{Cli, Command};
pub use error::CliError;
pub use record::RunRecord;
pub use settings::load_config;

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(CliError::usage(e.to_string()));
        }
    };
    run_cli(&cli)
}

pub fn run_cli(cli: &Cli) -> Result<(), CliError> {
    let jobs = cli.jobs.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::new("thread_pool", e.to_string()))?;
    pool.install(|| commands::dispatch(cli))
}
