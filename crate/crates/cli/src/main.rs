mod args;
mod commands;

use std::ffi::OsString;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{CommandFactory, FromArgMatches};
use serde_json::Value;

use args::Cli;

/// Turns a `--config` JSON object into flags placed right after the
/// subcommand, so that flags written on the command line override them.
fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(pos) = argv.iter().position(|a| a == "--config" || a.to_string_lossy().starts_with("--config=")) else {
        return Ok(argv);
    };
    let path = match argv[pos].to_string_lossy().strip_prefix("--config=") {
        Some(p) => OsString::from(p),
        None => argv.get(pos + 1).cloned().context("--config needs a file")?,
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {}", path.to_string_lossy()))?;
    let json: Value =
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.to_string_lossy()))?;
    let Value::Object(fields) = json else {
        bail!("config must be a JSON object of flag values");
    };
    let mut flags = Vec::new();
    for (key, value) in fields {
        let flag = OsString::from(format!("--{}", key.replace('_', "-")));
        let scalar = |v: &Value| match v {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            _ => bail!("config field '{key}' must be a string, number, boolean or array"),
        };
        match &value {
            Value::Bool(true) => flags.push(flag),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                flags.push(flag);
                let items = items.iter().map(scalar).collect::<Result<Vec<_>>>()?;
                if key == "patch" {
                    flags.push(items.join(",").into());
                } else {
                    flags.extend(items.into_iter().map(OsString::from));
                }
            }
            v => {
                flags.push(flag);
                flags.push(scalar(v)?.into());
            }
        }
    }
    // The subcommand is the first argument.
    let mut out: Vec<OsString> = argv[..2.min(argv.len())].to_vec();
    out.extend(flags);
    out.extend(argv.into_iter().skip(2));
    Ok(out)
}

fn main() -> ExitCode {
    let argv: Vec<OsString> = std::env::args_os().collect();
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let command = Cli::command().mut_subcommands(|s| s.args_override_self(true));
    let cli = match command.try_get_matches_from(argv).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
