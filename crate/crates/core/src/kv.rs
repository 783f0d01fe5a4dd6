//! Line-oriented `key=value` text used by configs, manifests and reports.
//! Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub fn parse(text: &str, what: &'static str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(what, format!("line {}: expected key=value, got `{line}`", lineno + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn render<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> String {
    pairs.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn require<'m>(map: &'m BTreeMap<String, String>, key: &str, what: &'static str) -> Result<&'m str> {
    map.get(key).map(String::as_str).ok_or_else(|| Error::format(what, format!("missing key `{key}`")))
}

pub fn parse_value<T: std::str::FromStr>(value: &str, key: &str, what: &'static str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| Error::format(what, format!("bad value for `{key}`: {e}")))
}
