//! `key = value` defaults files and run manifests.
//!
//! A config file supplies long flags of one subcommand, without the leading
//! dashes. Flags given on the command line win. The optional `command` key
//! names the subcommand, so a manifest written by a run can be passed back
//! with `--config` alone.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::Path;

use clap::{ArgMatches, Command};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("SSNFLOW_GIT_DESCRIBE"), ")");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse(text: &str) -> Result<Vec<Entry>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(format!("line {}: expected key = value, got '{line}'", i + 1));
        };
        let key = k.trim();
        if key.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        out.push(Entry { key: key.to_string(), value: v.trim().to_string(), line: i + 1 });
    }
    Ok(out)
}

fn long_flags(cmd: &Command) -> BTreeSet<String> {
    cmd.get_arguments().filter_map(|a| a.get_long()).filter(|l| *l != "help").map(str::to_string).collect()
}

/// Pull `--config FILE` out of `argv` and splice the file's entries in
/// after the subcommand name.
pub fn expand(argv: Vec<OsString>, root: &Command) -> Result<Vec<OsString>, String> {
    let mut args: Vec<String> = Vec::with_capacity(argv.len());
    for a in argv {
        args.push(a.into_string().map_err(|a| format!("argument is not valid UTF-8: {a:?}"))?);
    }
    let mut path = None;
    let mut i = 1;
    while i < args.len() {
        if args[i] == "--config" {
            let p = args.get(i + 1).ok_or("--config needs a file name")?.clone();
            args.drain(i..i + 2);
            path = Some(p);
        } else if let Some(p) = args[i].strip_prefix("--config=") {
            path = Some(p.to_string());
            args.remove(i);
        } else {
            i += 1;
        }
    }
    let Some(path) = path else {
        return Ok(args.into_iter().map(OsString::from).collect());
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read config {path}: {e}"))?;
    let entries = parse(&text).map_err(|e| format!("{path}: {e}"))?;

    let names: Vec<&str> = root.get_subcommands().map(|c| c.get_name()).collect();
    let mut pos = args.iter().skip(1).position(|a| names.contains(&a.as_str())).map(|p| p + 1);
    let named = entries.iter().find(|e| e.key == "command");
    if pos.is_none() {
        let Some(cmd) = named else {
            return Err(format!("{path}: no subcommand given and no 'command' key"));
        };
        if !names.contains(&cmd.value.as_str()) {
            return Err(format!("{path}:{}: unknown command '{}'", cmd.line, cmd.value));
        }
        args.insert(1, cmd.value.clone());
        pos = Some(1);
    }
    let pos = pos.expect("subcommand position is known");
    let sub = root.find_subcommand(&args[pos]).expect("subcommand exists");
    if let Some(cmd) = named {
        if cmd.value != args[pos] {
            return Err(format!("{path}:{}: config is for '{}', not '{}'", cmd.line, cmd.value, args[pos]));
        }
    }
    let known = long_flags(sub);
    let explicit: BTreeSet<String> = args[pos + 1..]
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    let mut injected = Vec::new();
    for e in entries.iter().filter(|e| e.key != "command") {
        if !known.contains(&e.key) {
            return Err(format!("{path}:{}: unknown key '{}' for '{}'", e.line, e.key, args[pos]));
        }
        if !explicit.contains(&e.key) {
            injected.push(format!("--{}={}", e.key, e.value));
        }
    }
    args.splice(pos + 1..pos + 1, injected);
    Ok(args.into_iter().map(OsString::from).collect())
}

/// Every flag value of the chosen subcommand, defaults included, in the
/// config format read by [`expand`].
pub fn manifest(root: &Command, name: &str, matches: &ArgMatches) -> String {
    let sub = root.find_subcommand(name).expect("subcommand exists");
    let mut s = String::new();
    let _ = writeln!(s, "# ssnflow {VERSION}");
    let _ = writeln!(s, "# written {}", chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    let _ = writeln!(s, "command = {name}");
    for arg in sub.get_arguments() {
        let Some(long) = arg.get_long() else { continue };
        if long == "help" {
            continue;
        }
        if let Some(vals) = matches.get_raw(arg.get_id().as_str()) {
            let joined: Vec<String> = vals.map(|v| v.to_string_lossy().into_owned()).collect();
            let _ = writeln!(s, "{long} = {}", joined.join(","));
        }
    }
    s
}

pub fn write_manifest(dir: &Path, text: &str) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("manifest.txt"), text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_skips_comments_and_blank_lines() {
        let e = parse("# c\n\n tau-star = 3 \nform=max\n").unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!((e[0].key.as_str(), e[0].value.as_str(), e[0].line), ("tau-star", "3", 3));
        assert!(parse("no equals sign").is_err());
        assert!(parse(" = 3").is_err());
    }
}
