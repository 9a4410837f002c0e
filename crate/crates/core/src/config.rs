//! Plain-text `key = value` files with `#` comments.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Splits `text` into entries. Blank lines and `#` comments (whole-line or
/// trailing) are skipped; duplicated keys are an error.
pub fn parse_kv(text: &str, origin: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!("{origin}:{}: expected key=value, got '{line}'", i + 1)));
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("{origin}:{}: empty key", i + 1)));
        }
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(Error::Config(format!(
                "{origin}:{}: key '{key}' already set on line {}",
                i + 1,
                prev.line
            )));
        }
        out.push(Entry {
            key: key.to_string(),
            value: value.trim().to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}

pub fn read_kv_file(path: &Path) -> Result<Vec<Entry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kv(&text, &path.display().to_string())
}

/// Parses one `key=value` command-line override.
pub fn parse_override(s: &str) -> Result<Entry> {
    let (key, value) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{s}' is not key=value")))?;
    Ok(Entry {
        key: key.trim().to_string(),
        value: value.trim().to_string(),
        line: 0,
    })
}

pub fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{raw}'")))
}

pub fn pair(key: &str, raw: &str) -> Result<(f64, f64)> {
    let (a, b) = raw
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("{key}: expected 'x,y', got '{raw}'")))?;
    Ok((value(key, a.trim())?, value(key, b.trim())?))
}

/// `x1,y1; x2,y2; ...`
pub fn points(key: &str, raw: &str) -> Result<Vec<(f64, f64)>> {
    raw.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|p| pair(key, p))
        .collect()
}

pub fn bool_value(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got '{raw}'"))),
    }
}
