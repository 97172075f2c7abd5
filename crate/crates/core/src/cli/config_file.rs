//! `key = value` config files, merged under explicit flags.
//!
//! Each entry becomes `--key value` inserted directly after the subcommand
//! name, ahead of the user's own flags; since later occurrences of a flag
//! win, explicit flags override the file and the file overrides defaults.

use std::fs;
use std::path::Path;

use clap::CommandFactory;

use crate::cli::args::Cli;
use crate::error::{Error, Result};

/// Parsed `(key, value)` entries with keys normalized to flag form
/// (`batch_size` and `--batch-size` both become `batch-size`).
pub fn parse_config(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("{}:{}: expected `key = value`", path.display(), i + 1))
        })?;
        let key = k.trim().trim_start_matches('-').replace('_', "-");
        if key.is_empty() {
            return Err(Error::Config(format!("{}:{}: empty key", path.display(), i + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn long_flags(cmd: &clap::Command) -> Vec<String> {
    cmd.get_arguments()
        .filter_map(|a| a.get_long().map(str::to_string))
        .collect()
}

/// Position of the subcommand name in `argv`, skipping global options and
/// their values.
fn subcommand_position(argv: &[String], names: &[String]) -> Option<usize> {
    let mut i = 1;
    while i < argv.len() {
        let a = &argv[i];
        if names.iter().any(|n| n == a) {
            return Some(i);
        }
        if (a == "--threads" || a == "--config") && i + 1 < argv.len() {
            i += 2;
        } else {
            i += 1;
        }
    }
    None
}

/// Finds a `--config FILE` (or `--config=FILE`) anywhere in `argv`.
fn config_path(argv: &[String]) -> Option<String> {
    let mut found = None;
    for (i, a) in argv.iter().enumerate() {
        if let Some(v) = a.strip_prefix("--config=") {
            found = Some(v.to_string());
        } else if a == "--config" {
            found = argv.get(i + 1).cloned();
        }
    }
    found
}

/// `argv` with the config file's entries spliced in after the subcommand.
/// Keys accepted by no subcommand are a configuration error; keys belonging
/// only to other subcommands are ignored.
pub fn merge_config(argv: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let path = Path::new(&path);
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let entries = parse_config(&text, path)?;

    let root = Cli::command();
    let subs: Vec<&clap::Command> = root.get_subcommands().collect();
    let names: Vec<String> = subs.iter().map(|c| c.get_name().to_string()).collect();
    let Some(pos) = subcommand_position(&argv, &names) else {
        return Ok(argv);
    };
    let accepted = long_flags(subs.iter().find(|c| c.get_name() == argv[pos]).expect("known name"));
    let global = long_flags(&root);

    let mut injected = Vec::new();
    for (key, value) in entries {
        if global.contains(&key) {
            if key == "threads" {
                injected.push(format!("--{key}"));
                injected.push(value);
            }
            continue;
        }
        if accepted.contains(&key) {
            injected.push(format!("--{key}"));
            injected.push(value);
        } else if !subs.iter().any(|c| long_flags(c).contains(&key)) {
            return Err(Error::Config(format!(
                "{}: unknown key `{key}`",
                path.display()
            )));
        }
    }
    let mut out = argv;
    out.splice(pos + 1..pos + 1, injected);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn parses_comments_and_normalizes_keys() {
        let e = parse_config("# top\nbatch_size = 4  # inline\n\n--epochs=2\n", Path::new("c")).unwrap();
        assert_eq!(e, vec![("batch-size".into(), "4".into()), ("epochs".into(), "2".into())]);
        assert!(parse_config("oops\n", Path::new("c")).is_err());
    }

    #[test]
    fn file_goes_between_subcommand_and_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.conf");
        fs::write(&cfg, "epochs = 3\nlooks = 2\nbatch_size = 8\n").unwrap();
        let merged = merge_config(argv(&format!(
            "bin --config {} train pairs --out m.ckpt --epochs 5",
            cfg.display()
        )))
        .unwrap();
        let tail: Vec<&str> = merged[3..].iter().map(String::as_str).collect();
        assert_eq!(
            tail,
            ["train", "--epochs", "3", "--batch-size", "8", "pairs", "--out", "m.ckpt", "--epochs", "5"]
        );

        fs::write(&cfg, "bogus = 1\n").unwrap();
        assert!(merge_config(argv(&format!("bin --config {} train p --out m", cfg.display()))).is_err());
    }
}
