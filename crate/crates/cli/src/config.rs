//! `--config FILE`: `key = value` lines that act as default long flags.
//! Flags given on the command line win; `true`/`false` toggle switches.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};

pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("line {}: expected key = value, got {line:?}", i + 1);
        };
        let key = k.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            bail!("line {}: invalid key {:?}", i + 1, k.trim());
        }
        out.push((key, v.trim().trim_matches('"').to_string()));
    }
    Ok(out)
}

fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_pairs(&text).with_context(|| format!("config {}", path.display()))
}

/// Removes `--config FILE` from `argv` and appends the file's pairs as
/// flags not already present.
pub fn expand_args(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut args = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            match it.next() {
                Some(p) => config = Some(p),
                None => bail!("--config needs a file argument"),
            }
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(OsString::from(p));
        } else {
            args.push(a);
        }
    }
    let Some(path) = config else {
        return Ok(args);
    };
    let given = |key: &str| {
        let flag = format!("--{key}");
        let with_value = format!("--{key}=");
        args.iter().any(|a| {
            let a = a.to_string_lossy();
            a == flag || a.starts_with(&with_value)
        })
    };
    let mut extra = Vec::new();
    for (key, value) in read_pairs(Path::new(&path))? {
        if given(&key) {
            continue;
        }
        match value.as_str() {
            "true" => extra.push(OsString::from(format!("--{key}"))),
            "false" => {}
            _ => {
                extra.push(OsString::from(format!("--{key}")));
                extra.push(OsString::from(value));
            }
        }
    }
    args.extend(extra);
    Ok(args)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn pairs() {
        let p = parse_pairs("# c\nscale = 0.7\nsimplify_tol=0.1\n\n").unwrap();
        assert_eq!(p, [("scale".into(), "0.7".into()), ("simplify-tol".into(), "0.1".into())]);
        assert!(parse_pairs("oops").is_err());
    }

    #[test]
    fn command_line_wins() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.txt");
        std::fs::write(&f, "scale = 0.7\nseed = 3\nallow-single-class = true\nno-bootstrap = false\n").unwrap();
        let out = expand_args(os(&["delinkit", "segment", "--seed", "9", "--config", f.to_str().unwrap()])).unwrap();
        assert_eq!(out, os(&["delinkit", "segment", "--seed", "9", "--scale", "0.7", "--allow-single-class"]));
        assert!(expand_args(os(&["delinkit", "--config"])).is_err());
        assert!(expand_args(os(&["delinkit", "--config=/missing"])).is_err());
    }
}
