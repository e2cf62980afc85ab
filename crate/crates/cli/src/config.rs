//! Flat `key = value` config files merged under command-line flags.
//!
//! Keys are long flag names without dashes. A key is only applied when the
//! subcommand has that flag and the command line does not already set it.
//! Repeatable flags take whitespace-separated values; switches take
//! `true`/`false`.

use std::fs;
use std::path::Path;

use clap::{ArgAction, Command};

pub struct ConfigError(pub String);

/// Parses the file into `(key, value)` pairs in file order.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("config line {}: expected key = value", no + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError(format!("config line {}: empty key", no + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

fn has_flag(args: &[String], long: &str) -> bool {
    let bare = format!("--{long}");
    let eq = format!("--{long}=");
    args.iter().any(|a| *a == bare || a.starts_with(&eq))
}

/// Appends config-file entries to `args` as flags of the chosen subcommand.
pub fn merge_config(cmd: &Command, args: Vec<String>) -> Result<Vec<String>, ConfigError> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(Path::new(&path)).map_err(|e| ConfigError(format!("cannot read config {path}: {e}")))?;
    let entries = parse_config(&text)?;
    let Some(sub) = args.iter().skip(1).find_map(|a| cmd.find_subcommand(a)) else {
        return Ok(args);
    };
    let mut extra = Vec::new();
    for (key, value) in entries {
        let Some(arg) = sub.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else {
            continue;
        };
        if has_flag(&args, &key) {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" | "1" | "yes" => extra.push(format!("--{key}")),
                "false" | "0" | "no" => {}
                _ => return Err(ConfigError(format!("config key {key}: expected true or false, got {value}"))),
            },
            ArgAction::Append => {
                for v in value.split_whitespace() {
                    extra.push(format!("--{key}={v}"));
                }
            }
            _ => extra.push(format!("--{key}={value}")),
        }
    }
    let mut merged = args;
    merged.extend(extra);
    Ok(merged)
}
