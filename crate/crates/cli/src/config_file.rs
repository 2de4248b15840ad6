//! `key = value` configuration files, expanded into flags ahead of the real ones.

use std::ffi::OsString;
use std::path::Path;

use affectgen::{Error, Result};

pub fn parse(text: &str) -> Result<Vec<OsString>> {
    let mut args = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("config line {}: expected key = value", i + 1)))?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key == "config" {
            return Err(Error::config(format!("config line {}: bad key", i + 1)));
        }
        match value {
            "true" => args.push(format!("--{key}").into()),
            "false" => {}
            _ => {
                args.push(format!("--{key}").into());
                args.push(value.into());
            }
        }
    }
    Ok(args)
}

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

/// Inserts the flags from `--config FILE` right after the subcommand name so that
/// flags given on the command line override them.
pub fn expand(args: Vec<OsString>, subcommands: &[&str]) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| Error::config(format!("config file {}: {e}", Path::new(&path).display())))?;
    let extra = parse(&text)?;
    let at = args
        .iter()
        .position(|a| subcommands.iter().any(|s| a == s))
        .map(|i| i + 1)
        .unwrap_or(args.len());
    let mut out = args[..at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[at..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_and_booleans() {
        let args = parse("# c\nbeam = 5\nlength_normalize = true\nshow-affect = false\n").unwrap();
        let args: Vec<String> = args.into_iter().map(|a| a.into_string().unwrap()).collect();
        assert_eq!(args, ["--beam", "5", "--length-normalize"]);
        assert!(parse("beam 5").is_err());
    }

    #[test]
    fn expansion_goes_after_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        std::fs::write(&p, "beam = 5\n").unwrap();
        let args: Vec<OsString> = ["bin", "decode", "--config", p.to_str().unwrap(), "--beam", "2"]
            .iter()
            .map(OsString::from)
            .collect();
        let out = expand(args, &["decode"]).unwrap();
        let out: Vec<String> = out.into_iter().map(|a| a.into_string().unwrap()).collect();
        assert_eq!(&out[..4], ["bin", "decode", "--beam", "5"]);
        assert_eq!(&out[out.len() - 2..], ["--beam", "2"]);
    }
}
