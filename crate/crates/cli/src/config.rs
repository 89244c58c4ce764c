//! Merges flag values from a JSON config file into the command line.
//!
//! The file is a JSON object. Top-level keys set flags of whichever
//! subcommand runs; an object stored under a subcommand's name sets flags of
//! that subcommand only. Keys use the long flag name with or without the
//! leading dashes and with either `-` or `_`. Config flags are inserted right
//! after the subcommand token, so anything given on the command line wins.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Command;
use serde_json::{Map, Value};

/// Global options that take a value and come before the subcommand.
const GLOBAL_VALUED: [&str; 2] = ["--threads", "--config"];

/// Config path given on the command line, if any, and the position of the
/// subcommand token.
pub fn scan(args: &[OsString]) -> (Option<OsString>, Option<usize>) {
    let mut config = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if let Some(v) = a.strip_prefix("--config=") {
            config = Some(OsString::from(v));
        } else if GLOBAL_VALUED.contains(&a.as_ref()) {
            if a == "--config" {
                config = args.get(i + 1).cloned();
            }
            i += 1;
        } else if !a.starts_with('-') {
            return (config, Some(i));
        }
        i += 1;
    }
    (config, None)
}

fn flag_name(key: &str) -> String {
    key.trim_start_matches('-').replace('_', "-")
}

fn render(v: &Value) -> Result<String> {
    Ok(match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        Value::Array(items) => items
            .iter()
            .map(render)
            .collect::<Result<Vec<_>>>()?
            .join(","),
        Value::Null | Value::Object(_) => bail!("unsupported config value {v}"),
    })
}

/// Flags from `path` for subcommand `sub`, as `--name=value` tokens.
pub fn flags_for(path: &Path, sub: &Command) -> Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let root: Map<String, Value> = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    let known: Vec<String> = sub
        .get_arguments()
        .filter_map(|a| a.get_long().map(str::to_owned))
        .collect();
    let mut out = Vec::new();
    let mut push = |key: &str, v: &Value, strict: bool| -> Result<()> {
        let name = flag_name(key);
        if !known.contains(&name) {
            if strict {
                bail!("config sets unknown flag --{name} for `{}`", sub.get_name());
            }
            return Ok(());
        }
        out.push(OsString::from(format!("--{name}={}", render(v)?)));
        Ok(())
    };
    for (k, v) in &root {
        if matches!(v, Value::Object(_)) || GLOBAL_VALUED.contains(&format!("--{}", flag_name(k)).as_str()) {
            continue;
        }
        push(k, v, false)?;
    }
    if let Some(Value::Object(section)) = root.get(sub.get_name()) {
        for (k, v) in section {
            push(k, v, true)?;
        }
    }
    Ok(out)
}

/// `threads` from the top level of the config, if set.
pub fn threads(path: &Path) -> Result<Option<usize>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let root: Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    match root.get("threads") {
        None => Ok(None),
        Some(v) => v
            .as_u64()
            .map(|n| Some(n as usize))
            .with_context(|| format!("config threads must be a positive integer, got {v}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn scan_skips_global_values() {
        let (c, i) = scan(&os(&["rawdet", "--threads", "4", "--config", "c.json", "split", "--seed", "1"]));
        assert_eq!(c, Some(OsString::from("c.json")));
        assert_eq!(i, Some(5));
        let (c, i) = scan(&os(&["rawdet", "--config=x.json", "eval"]));
        assert_eq!(c, Some(OsString::from("x.json")));
        assert_eq!(i, Some(2));
        assert_eq!(scan(&os(&["rawdet", "--version"])), (None, None));
    }

    #[test]
    fn values_render_as_flag_text() {
        assert_eq!(render(&serde_json::json!([791, 80])).unwrap(), "791,80");
        assert_eq!(render(&serde_json::json!(false)).unwrap(), "false");
        assert_eq!(render(&serde_json::json!("2000x1333")).unwrap(), "2000x1333");
        assert!(render(&serde_json::json!(null)).is_err());
    }
}
