//! Key-value config files that set flag defaults.
//!
//! Grammar, one setting per line:
//!
//! ```text
//! # comment
//! key = value
//! train.epochs = 200
//! ```
//!
//! `key` is a long flag name without the leading dashes. A dotted prefix
//! restricts the setting to one subcommand path (`synth.fgn.hurst`); an
//! unprefixed key applies to every subcommand that has the flag. Boolean
//! flags take `true` or `false`. Flags given on the command line win.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Command};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub scope: Vec<String>,
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected `key = value`", i + 1);
        };
        let mut path: Vec<String> = key.trim().split('.').map(str::to_owned).collect();
        let key = path.pop().unwrap_or_default();
        if key.is_empty() || path.iter().any(String::is_empty) {
            bail!("line {}: empty key", i + 1);
        }
        out.push(Entry {
            scope: path,
            key,
            value: value.trim().to_owned(),
            line: i + 1,
        });
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<Vec<Entry>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse(&text).with_context(|| format!("config {}", path.display()))
}

fn has_flag(cmd: &Command, key: &str) -> bool {
    cmd.get_arguments().any(|a| a.get_long() == Some(key))
}

fn any_has_flag(cmd: &Command, key: &str) -> bool {
    has_flag(cmd, key) || cmd.get_subcommands().any(|c| any_has_flag(c, key))
}

/// Command-line tokens for the settings that apply to the subcommand at
/// `chain`. Every key must exist somewhere in the command tree.
pub fn tokens(root: &Command, chain: &[String], entries: &[Entry]) -> Result<Vec<OsString>> {
    let mut leaf = root;
    for name in chain {
        leaf = leaf
            .find_subcommand(name)
            .with_context(|| format!("unknown subcommand `{name}`"))?;
    }
    let mut out = Vec::new();
    for e in entries {
        if !any_has_flag(root, &e.key) {
            bail!("config line {}: unknown key `{}`", e.line, e.key);
        }
        if !e.scope.is_empty() && !chain.starts_with(&e.scope) {
            continue;
        }
        let Some(arg) = leaf.get_arguments().find(|a| a.get_long() == Some(e.key.as_str())) else {
            continue;
        };
        if arg.is_global_set() {
            continue;
        }
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match e.value.as_str() {
                "true" => out.push(format!("--{}", e.key).into()),
                "false" => {}
                v => bail!("config line {}: `{}` takes true or false, got `{v}`", e.line, e.key),
            }
        } else {
            out.push(format!("--{}={}", e.key, e.value).into());
        }
    }
    Ok(out)
}

/// Value of `--config` in raw arguments, if any.
pub fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter().skip(1);
    while let Some(tok) = it.next() {
        let t = tok.to_string_lossy();
        if t == "--" {
            break;
        }
        if t == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = t.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

/// Subcommand names in raw arguments and the index just past the last one,
/// found by walking the command tree and skipping option values.
pub fn chain(root: &Command, argv: &[OsString]) -> (Vec<String>, usize) {
    let mut out = Vec::new();
    let mut at = 1;
    let mut cmd = root;
    let mut it = argv.iter().enumerate().skip(1);
    while let Some((i, tok)) = it.next() {
        let t = tok.to_string_lossy();
        if let Some(long) = t.strip_prefix("--") {
            if long.contains('=') {
                continue;
            }
            let takes_value = cmd
                .get_arguments()
                .chain(root.get_arguments())
                .find(|a| a.get_long() == Some(long))
                .is_some_and(|a| a.get_action().takes_values());
            if takes_value {
                it.next();
            }
        } else if let Some(sub) = cmd.find_subcommand(t.as_ref()) {
            out.push(sub.get_name().to_owned());
            at = i + 1;
            cmd = sub;
        }
    }
    (out, at)
}

/// Inserts `extra` at `at`, right after the subcommand names, so that later
/// command-line flags override them.
pub fn splice(argv: &[OsString], at: usize, extra: Vec<OsString>) -> Vec<OsString> {
    let mut out = argv[..at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[at..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_scopes_and_comments() {
        let e = parse("# c\n\nseed = 3\ntrain.epochs= 10 \n").unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[1].scope, vec!["train"]);
        assert_eq!((e[1].key.as_str(), e[1].value.as_str()), ("epochs", "10"));
        assert!(parse("novalue\n").is_err());
        assert!(parse(" = 3\n").is_err());
    }

    #[test]
    fn finds_chain_and_config() {
        let root = Command::new("p")
            .arg(clap::Arg::new("config").long("config"))
            .subcommand(Command::new("synth").subcommand(Command::new("fgn").arg(clap::Arg::new("out").long("out"))));
        let argv: Vec<OsString> = ["p", "--config", "synth", "synth", "fgn", "--out", "fgn"]
            .map(Into::into)
            .to_vec();
        assert_eq!(chain(&root, &argv), (vec!["synth".into(), "fgn".into()], 5));
        assert_eq!(config_path(&argv), Some("synth".into()));
        assert_eq!(
            config_path(&["p".into(), "--config=a.cfg".into()]),
            Some("a.cfg".into())
        );
    }

    #[test]
    fn splices_after_the_subcommand_chain() {
        let argv: Vec<OsString> = ["p", "--threads", "2", "synth", "fgn", "--n", "8"]
            .map(Into::into)
            .to_vec();
        let out = splice(&argv, 5, vec!["--n=4".into()]);
        let s: Vec<_> = out.iter().map(|t| t.to_str().unwrap()).collect();
        assert_eq!(s, ["p", "--threads", "2", "synth", "fgn", "--n=4", "--n", "8"]);
    }
}
