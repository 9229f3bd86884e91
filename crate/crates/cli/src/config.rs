//! `--config` files: one `key = value` per line, `#` comments. Each entry
//! becomes `--key value` right after the subcommand unless the same flag is
//! already on the command line.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// Parsed `(flag, value)` pairs in file order; `true`/`false` values toggle
/// switches.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected `key = value`", n + 1);
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key.starts_with('-') || key == "config" {
            bail!("config line {}: invalid key {key:?}", n + 1);
        }
        if value.is_empty() {
            bail!("config line {}: empty value for {key:?}", n + 1);
        }
        out.push((key, value.to_string()));
    }
    Ok(out)
}

fn config_path(argv: &[OsString]) -> Result<Option<(usize, usize, OsString)>> {
    for (i, a) in argv.iter().enumerate().skip(1) {
        let s = a.to_string_lossy();
        if s == "--config" {
            let Some(p) = argv.get(i + 1) else {
                bail!("--config needs a path");
            };
            return Ok(Some((i, 2, p.clone())));
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Ok(Some((i, 1, p.into())));
        }
    }
    Ok(None)
}

fn flag_present(argv: &[OsString], key: &str) -> bool {
    let flag = format!("--{key}");
    let with_value = format!("--{key}=");
    argv.iter().any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.starts_with(&with_value)
    })
}

/// Splices the config file's entries into `argv`.
pub fn expand_args(mut argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some((at, len, path)) = config_path(&argv)? else {
        return Ok(argv);
    };
    argv.drain(at..at + len);
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let entries = parse_config(&text).with_context(|| format!("config {}", path.display()))?;
    let Some(sub) = argv.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')) else {
        return Ok(argv);
    };
    let mut extra: Vec<OsString> = Vec::new();
    for (key, value) in entries {
        if flag_present(&argv, &key) {
            continue;
        }
        match value.as_str() {
            "true" => extra.push(format!("--{key}").into()),
            "false" => {}
            _ => {
                extra.push(format!("--{key}").into());
                extra.push(value.into());
            }
        }
    }
    let insert = sub + 2;
    argv.splice(insert..insert, extra);
    Ok(argv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn parses_comments_and_underscores() {
        let c = parse_config("# header\nmin_face = 24\n\nverbose=true # trailing\n").unwrap();
        assert_eq!(c, vec![("min-face".into(), "24".into()), ("verbose".into(), "true".into())]);
        assert!(parse_config("nonsense\n").is_err());
        assert!(parse_config("iters =\n").is_err());
    }

    #[test]
    fn flags_override_file_entries() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.conf");
        std::fs::write(&p, "iters = 3\nmin-face = 30\nverbose = false\n").unwrap();
        let argv = os(&["fc", "--config", p.to_str().unwrap(), "bench", "--iters=7"]);
        let out = expand_args(argv).unwrap();
        assert_eq!(out, os(&["fc", "bench", "--min-face", "30", "--iters=7"]));
    }

    #[test]
    fn untouched_without_config() {
        let argv = os(&["fc", "synth", "--n", "2"]);
        assert_eq!(expand_args(argv.clone()).unwrap(), argv);
    }
}
