//! `--config` merging. Keys of the JSON object name flags of the selected
//! subcommand (or global flags), in either `snake_case` or `kebab-case`.
//! A key is applied only when its flag was not given on the command line
//! or through the environment, so explicit flags always win.

use std::path::Path;

use clap::error::ErrorKind;
use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, CommandFactory};
use serde_json::Value;

use crate::args::Cli;

fn usage_error(msg: String) -> clap::Error {
    Cli::command().error(ErrorKind::ValueValidation, msg)
}

fn scalar(key: &str, v: &Value) -> Result<String, clap::Error> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        _ => Err(usage_error(format!("--config: value of `{key}` must be a string, number or boolean"))),
    }
}

/// Returns `argv` with config values appended as extra flags.
pub fn merge(mut argv: Vec<String>, matches: &ArgMatches) -> Result<Vec<String>, clap::Error> {
    let Some(path) = matches.get_one::<std::path::PathBuf>("config") else {
        return Ok(argv);
    };
    let object = read(path)?;

    let root = Cli::command();
    let mut leaf_cmd = &root;
    let mut leaf = matches;
    while let Some((name, sub)) = leaf.subcommand() {
        leaf_cmd = leaf_cmd.find_subcommand(name).expect("matched subcommand exists");
        leaf = sub;
    }

    for (key, value) in &object {
        let kebab = key.replace('_', "-");
        let snake = key.replace('-', "_");
        let find = |cmd: &clap::Command| {
            cmd.get_arguments().find(|a| a.get_id() == snake.as_str() || a.get_long() == Some(kebab.as_str())).cloned()
        };
        let (arg, source) = match (find(leaf_cmd), find(&root)) {
            (Some(arg), _) => (arg, leaf),
            (None, Some(arg)) => (arg, matches),
            (None, None) => return Err(usage_error(format!("--config: unknown key `{key}`"))),
        };
        let Some(long) = arg.get_long() else {
            return Err(usage_error(format!("--config: `{key}` cannot be set from a config file")));
        };
        if long == "config" {
            return Err(usage_error("--config: a config file cannot name another config file".into()));
        }
        let id = arg.get_id().as_str();
        let explicit = matches!(source.value_source(id), Some(ValueSource::CommandLine | ValueSource::EnvVariable));
        if explicit {
            continue;
        }

        let flag = format!("--{long}");
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value {
                Value::Bool(true) => argv.push(flag),
                Value::Bool(false) | Value::Null => {}
                _ => return Err(usage_error(format!("--config: `{key}` is a switch and takes true or false"))),
            }
            continue;
        }
        match value {
            Value::Null => {}
            Value::Array(items) => {
                let items = items.iter().map(|v| scalar(key, v)).collect::<Result<Vec<_>, _>>()?;
                if arg.get_value_delimiter().is_some() {
                    argv.push(flag);
                    argv.push(items.join(","));
                } else {
                    for item in items {
                        argv.push(flag.clone());
                        argv.push(item);
                    }
                }
            }
            v => {
                argv.push(flag);
                argv.push(scalar(key, v)?);
            }
        }
    }
    Ok(argv)
}

fn read(path: &Path) -> Result<serde_json::Map<String, Value>, clap::Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage_error(format!("--config: cannot read {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(usage_error(format!("--config: {} must hold a JSON object", path.display()))),
        Err(e) => Err(usage_error(format!("--config: {}: {e}", path.display()))),
    }
}
