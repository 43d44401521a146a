use std::path::PathBuf;
use std::time::Duration;

use canvas_forge::fnv::fnv1a64;
use serde::Serialize;

use crate::args::Cli;
use crate::Output;

/// One per run. The fingerprint hashes the resolved subcommand
/// configuration only, so global output flags and timing do not move it.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: &'static str,
    pub config_fingerprint: String,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub tool_version: &'static str,
    pub duration_secs: f64,
    pub exit_code: u8,
}

impl RunManifest {
    pub fn new(cli: &Cli, output: Option<&Output>, elapsed: Duration, exit_code: u8) -> Self {
        let config = serde_json::to_value(&cli.command).unwrap_or(serde_json::Value::Null);
        let mut outputs = output.map(|o| o.outputs.clone()).unwrap_or_default();
        if let Some(out) = &cli.global.out {
            outputs.insert(0, out.clone());
        }
        RunManifest {
            subcommand: cli.command.name(),
            config_fingerprint: format!("{:016x}", fnv1a64(config.to_string().as_bytes())),
            config,
            inputs: output.map(|o| o.inputs.clone()).unwrap_or_default(),
            outputs,
            seed: output.and_then(|o| o.seed),
            tool_version: env!("CARGO_PKG_VERSION"),
            duration_secs: elapsed.as_secs_f64(),
            exit_code,
        }
    }

    /// `--manifest` if given, else next to `--out`, else beside the
    /// command's main artifact. Commands that only print log it to stderr
    /// as one JSON line.
    fn location(cli: &Cli, output: Option<&Output>) -> Option<PathBuf> {
        if let Some(path) = &cli.global.manifest {
            return Some(path.clone());
        }
        if let Some(out) = &cli.global.out {
            let mut name = out.clone().into_os_string();
            name.push(".manifest.json");
            return Some(name.into());
        }
        output.and_then(|o| o.manifest_path.clone())
    }

    pub fn write(&self, cli: &Cli, output: Option<&Output>) -> anyhow::Result<()> {
        match Self::location(cli, output) {
            Some(path) => std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
                .map_err(|e| anyhow::anyhow!("{}: {e}", path.display())),
            None => {
                eprintln!("{}", serde_json::to_string(self)?);
                Ok(())
            }
        }
    }
}
