//! `key=value` config files. Every long flag of a subcommand can be given as
//! a key; entries are spliced in right after the subcommand name so that
//! flags on the command line, which come later, take precedence.

use std::fs;

use anyhow::{bail, Context, Result};

/// Parses `text` into `--key value` arguments. `true`/`false` values become
/// a bare flag or nothing.
pub fn config_args(text: &str, origin: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{origin}:{}: expected key=value, got `{line}`", n + 1);
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key == "config" {
            bail!("{origin}:{}: invalid key `{key}`", n + 1);
        }
        match value {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            _ => {
                out.push(format!("--{key}"));
                out.push(value.to_string());
            }
        }
    }
    Ok(out)
}

/// Removes `--config FILE` (or `--config=FILE`) from `args` and splices the
/// file's arguments in after the subcommand, the first positional argument.
pub fn expand(args: Vec<String>) -> Result<Vec<String>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut file = None;
    let mut iter = args.into_iter();
    while let Some(a) = iter.next() {
        if a == "--config" {
            file = Some(iter.next().context("--config needs a file path")?);
        } else if let Some(path) = a.strip_prefix("--config=") {
            file = Some(path.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(file) = file else {
        return Ok(rest);
    };
    let text = fs::read_to_string(&file).with_context(|| format!("reading config file {file}"))?;
    let extra = config_args(&text, &file)?;
    let sub = rest
        .iter()
        .skip(1)
        .position(|a| !a.starts_with('-'))
        .map(|p| p + 2);
    match sub {
        Some(at) => {
            rest.splice(at..at, extra);
            Ok(rest)
        }
        None => bail!("--config given without a subcommand"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_pairs_and_booleans() {
        let args = config_args(
            "# comment\nepochs = 20\nlambda_offset=true\nprofile=false\n\n",
            "c",
        )
        .unwrap();
        assert_eq!(args, strings(&["--epochs", "20", "--lambda-offset"]));
        assert!(config_args("epochs 20", "c")
            .unwrap_err()
            .to_string()
            .contains("c:1"));
    }

    #[test]
    fn splices_after_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "epochs=3\n").unwrap();
        let args = strings(&[
            "pm",
            "--config",
            path.to_str().unwrap(),
            "train",
            "--epochs",
            "5",
        ]);
        let out = expand(args).unwrap();
        assert_eq!(
            out,
            strings(&["pm", "train", "--epochs", "3", "--epochs", "5"])
        );
    }
}
