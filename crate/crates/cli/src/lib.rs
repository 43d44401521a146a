//! Command-line front end. The binary is a thin wrapper around [`main`].

pub mod args;
mod commands;
mod config;
pub mod manifest;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{CommandFactory, FromArgMatches};

use args::Cli;
use manifest::RunManifest;

/// How a run ended. Maps one-to-one onto the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Usage,
    Data,
    Service,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::Usage => 1,
            Status::Data => 2,
            Status::Service => 3,
        }
    }
}

/// Error carrying its exit status. Errors without one are data errors.
#[derive(Debug)]
pub struct Failure {
    pub status: Status,
    pub message: String,
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    Failure { status: Status::Usage, message: message.into() }.into()
}

/// The error chain, skipping causes the previous message already quotes.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn status_of(err: &anyhow::Error) -> Status {
    err.downcast_ref::<Failure>().map_or(Status::Data, |f| f.status)
}

/// Result of a command. A non-`Ok` status still prints the payload: it
/// marks partial failures such as dead-lettered records.
pub struct Output {
    pub json: serde_json::Value,
    pub table: Option<String>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Where the run manifest goes when neither --manifest nor --out is given.
    pub manifest_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub status: Status,
}

impl Output {
    pub fn new(json: impl serde::Serialize) -> anyhow::Result<Self> {
        Ok(Output {
            json: serde_json::to_value(json)?,
            table: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            manifest_path: None,
            seed: None,
            status: Status::Ok,
        })
    }

    pub fn table(mut self, table: String) -> Self {
        self.table = Some(table);
        self
    }

    pub fn inputs<P: Into<PathBuf>>(mut self, paths: impl IntoIterator<Item = P>) -> Self {
        self.inputs.extend(paths.into_iter().map(Into::into));
        self
    }

    pub fn outputs<P: Into<PathBuf>>(mut self, paths: impl IntoIterator<Item = P>) -> Self {
        self.outputs.extend(paths.into_iter().map(Into::into));
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn manifest_path(mut self, path: PathBuf) -> Self {
        self.manifest_path = Some(path);
        self
    }
}

fn emit(cli: &Cli, out: &Output) -> anyhow::Result<()> {
    let text = match (&out.table, cli.global.pretty) {
        (Some(table), true) => table.clone(),
        (None, true) => serde_json::to_string_pretty(&out.json)? + "\n",
        _ => serde_json::to_string(&out.json)? + "\n",
    };
    match &cli.global.out {
        Some(path) => std::fs::write(path, text).map_err(|e| anyhow::anyhow!("writing {}: {e}", path.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// Parses `argv` (program name first) with `--config` values merged in.
pub fn parse(argv: Vec<String>) -> Result<Cli, clap::Error> {
    // The first pass only locates --config and records which flags were
    // given; required flags may still be missing because the config
    // supplies them.
    let lenient = Cli::command().ignore_errors(true).try_get_matches_from(&argv)?;
    let argv = config::merge(argv, &lenient)?;
    let matches = Cli::command().try_get_matches_from(&argv)?;
    Cli::from_arg_matches(&matches)
}

pub fn main(argv: Vec<String>) -> ExitCode {
    let cli = match parse(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(Status::Usage.code()),
            };
        }
    };

    let started = Instant::now();
    let result = commands::run(&cli);
    let status = match &result {
        Ok(out) => match emit(&cli, out) {
            Ok(()) => out.status,
            Err(e) => {
                eprintln!("error: {}", describe(&e));
                Status::Data
            }
        },
        Err(e) => {
            eprintln!("error: {}", describe(e));
            status_of(e)
        }
    };

    let manifest = RunManifest::new(&cli, result.as_ref().ok(), started.elapsed(), status.code());
    if let Err(e) = manifest.write(&cli, result.as_ref().ok()) {
        eprintln!("error: writing run manifest: {}", describe(&e));
    }
    ExitCode::from(status.code())
}
