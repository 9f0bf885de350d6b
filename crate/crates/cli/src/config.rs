//! Config-file defaults. The file is a flat JSON object keyed by long flag
//! name (`max_connections` or `max-connections`); its values become clap
//! defaults, so anything given on the command line wins.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::PathBuf;

use clap::Command;
use serde_json::{Map, Value};

use crate::error::CliError;

/// The `--config` value, if any, without running the full parser.
pub fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

pub fn load(path: &PathBuf) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map.into_iter().map(|(k, v)| (k.replace('-', "_"), v)).collect()),
        Ok(_) => Err(CliError::Usage(format!("config {}: expected a JSON object", path.display()))),
        Err(e) => Err(CliError::Usage(format!("config {}: {e}", path.display()))),
    }
}

fn collect_ids(cmd: &Command, out: &mut BTreeSet<String>) {
    out.extend(cmd.get_arguments().map(|a| a.get_id().to_string()));
    for sub in cmd.get_subcommands() {
        collect_ids(sub, out);
    }
}

fn to_strings(key: &str, v: &Value) -> Result<Vec<String>, CliError> {
    let scalar = |v: &Value| match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        _ => Err(CliError::Usage(format!("config key {key}: unsupported value {v}"))),
    };
    match v {
        Value::Array(items) => items.iter().map(scalar).collect(),
        other => Ok(vec![scalar(other)?]),
    }
}

fn apply(mut cmd: Command, cfg: &Map<String, Value>) -> Result<Command, CliError> {
    let ids: Vec<String> = cmd.get_arguments().map(|a| a.get_id().to_string()).collect();
    for id in ids {
        let Some(v) = cfg.get(&id) else { continue };
        let vals = to_strings(&id, v)?;
        if vals == ["false"] {
            continue;
        }
        cmd = cmd.mut_arg(&id, |a| a.default_values(vals).required(false));
    }
    let subs: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for name in subs {
        let mut err = None;
        cmd = cmd.mut_subcommand(&name, |sub| match apply(sub.clone(), cfg) {
            Ok(s) => s,
            Err(e) => {
                err = Some(e);
                sub
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
    }
    Ok(cmd)
}

/// `cmd` with config values installed as defaults. Unknown keys are errors.
pub fn with_defaults(cmd: Command, cfg: &Map<String, Value>) -> Result<Command, CliError> {
    let mut known = BTreeSet::new();
    collect_ids(&cmd, &mut known);
    if let Some(k) = cfg.keys().find(|k| !known.contains(*k) || *k == "config") {
        return Err(CliError::Usage(format!("config key {k:?} is not an option")));
    }
    apply(cmd, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::args::Cli;
    use clap::{CommandFactory, FromArgMatches};

    fn parse(cfg: &str, args: &[&str]) -> Result<Cli, CliError> {
        let map = match serde_json::from_str(cfg).unwrap() {
            Value::Object(m) => m.into_iter().map(|(k, v)| (k.replace('-', "_"), v)).collect(),
            _ => unreachable!(),
        };
        let cmd = with_defaults(Cli::command(), &map)?;
        let argv = std::iter::once("dtlsgate").chain(args.iter().copied());
        let mut m = cmd.try_get_matches_from(argv).map_err(|e| CliError::Usage(e.to_string()))?;
        Cli::from_arg_matches_mut(&mut m).map_err(|e| CliError::Usage(e.to_string()))
    }

    #[test]
    fn finds_config_flag() {
        let argv = |a: &[&str]| a.iter().map(OsString::from).collect::<Vec<_>>();
        assert_eq!(config_path(&argv(&["x", "model", "--config", "a.json"])), Some("a.json".into()));
        assert_eq!(config_path(&argv(&["x", "--config=b.json"])), Some("b.json".into()));
        assert_eq!(config_path(&argv(&["x", "--", "--config", "c"])), None);
    }

    #[test]
    fn values_become_defaults() {
        let cli = parse(
            r#"{"seed": 9, "listen": "127.0.0.1:9", "no-reuse-kex": true, "workers": 3}"#,
            &["gateway", "run", "--workers", "2"],
        )
        .unwrap();
        assert_eq!(cli.seed, Some(9));
        let crate::args::Command::Gateway(crate::args::GatewayCmd::Run(a)) = cli.command else {
            panic!("wrong command");
        };
        assert_eq!(a.listen, "127.0.0.1:9");
        assert!(a.no_reuse_kex);
        assert_eq!(a.workers, 2);
    }

    #[test]
    fn lists_and_bad_keys() {
        let cli = parse(r#"{"payload": [100, 200], "stage": "HASH"}"#, &["bench", "micro"]).unwrap();
        let crate::args::Command::Bench(crate::args::BenchCmd::Micro(a)) = cli.command else {
            panic!("wrong command");
        };
        assert_eq!(a.payload, [100, 200]);
        assert!(matches!(parse(r#"{"nope": 1}"#, &["model", "params"]), Err(CliError::Usage(_))));
        assert!(matches!(parse(r#"{"seed": {"a": 1}}"#, &["model", "params"]), Err(CliError::Usage(_))));
    }
}
