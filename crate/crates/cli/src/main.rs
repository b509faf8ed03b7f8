//! `seastate` command-line tool.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.
//! Failures are reported on stderr as one line of JSON.

mod commands;
mod config;
mod output;

use std::collections::BTreeMap;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

use commands::RunError;
use config::{parse_config_file, CommandKind, RunConfig, KEYS, SWITCHES};

fn cli() -> Command {
    let mut args: Vec<Arg> = KEYS
        .iter()
        .map(|&(key, help)| {
            let arg = Arg::new(key).long(key).help(help).action(ArgAction::Set);
            if SWITCHES.contains(&key) {
                arg.num_args(0..=1).default_missing_value("true").value_name("BOOL")
            } else {
                arg
            }
        })
        .collect();
    args.push(Arg::new("config").long("config").help("key = value file; flags override it"));
    let mut cmd = Command::new("seastate")
        .about("State-space seasonal decomposition with trigonometric components")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true);
    for (name, _, about) in CommandKind::ALL {
        cmd = cmd.subcommand(Command::new(name).about(about).args(args.clone()));
    }
    cmd
}

fn settings(sub: &ArgMatches) -> Result<BTreeMap<String, String>, RunError> {
    let mut map = match sub.get_one::<String>("config") {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| RunError::Config(format!("config file {path}: {e}")))?;
            parse_config_file(&text)?
        }
        None => BTreeMap::new(),
    };
    for &(key, _) in KEYS {
        if let Some(v) = sub.get_one::<String>(key) {
            map.insert(key.to_string(), v.clone());
        }
    }
    Ok(map)
}

fn report(err: &RunError) {
    let (kind, message) = match err {
        RunError::Config(m) => ("config", m),
        RunError::Runtime(m) => ("runtime", m),
    };
    let line = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{line}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            report(&RunError::Config(first.to_string()));
            return ExitCode::from(2);
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let kind = CommandKind::ALL.iter().find(|(n, _, _)| *n == name).map(|c| c.1).expect("known subcommand");

    let result = settings(sub)
        .and_then(|map| {
            let env = std::env::var("SEASTATE_THREADS").ok();
            Ok(RunConfig::from_settings(kind, &map, env.as_deref())?)
        })
        .and_then(|cfg| commands::run(&cfg));
    match result {
        Ok(files) => {
            for f in files {
                log::info!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            report(&e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
