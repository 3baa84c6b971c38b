//! Flat `key = value` text used by configs, manifests, pair metadata and
//! checkpoint headers.

use crate::error::{Error, Result};

/// Entries in file order. `#` starts a comment; blank lines are skipped;
/// a repeated key is an error.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("line {}: expected key = value", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || k.chars().any(char::is_whitespace) {
            return Err(Error::Format(format!("line {}: bad key {k:?}", n + 1)));
        }
        if out.iter().any(|(e, _)| e == k) {
            return Err(Error::Format(format!("line {}: duplicate key {k}", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub fn render(entries: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in entries {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(v);
        s.push('\n');
    }
    s
}

/// Scalar that round-trips through its text form.
pub trait KvValue: Sized {
    fn render(&self) -> String;
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
}

impl KvValue for f64 {
    fn render(&self) -> String {
        format!("{self:?}")
    }
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        let v: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("not finite: {s:?}"))
        }
    }
}

impl KvValue for usize {
    fn render(&self) -> String {
        self.to_string()
    }
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|_| format!("not a count: {s:?}"))
    }
}

impl KvValue for u64 {
    fn render(&self) -> String {
        self.to_string()
    }
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|_| format!("not an integer: {s:?}"))
    }
}

impl KvValue for bool {
    fn render(&self) -> String {
        self.to_string()
    }
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        match s {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            _ => Err(format!("not a boolean: {s:?}")),
        }
    }
}

/// Struct whose fields map onto named keys.
pub trait KvFields {
    fn kv_pairs(&self) -> Vec<(&'static str, String)>;
    /// `Ok(false)` when `key` is not one of this struct's keys.
    fn kv_set(&mut self, key: &str, value: &str) -> Result<bool>;
}

/// Implements [`KvFields`] from a `"key" => field.path` table.
macro_rules! kv_fields {
    ($ty:ty { $($key:literal => $($field:ident).+),* $(,)? }) => {
        impl $crate::kv::KvFields for $ty {
            fn kv_pairs(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, $crate::kv::KvValue::render(&self.$($field).+))),*]
            }
            fn kv_set(&mut self, key: &str, value: &str) -> $crate::error::Result<bool> {
                match key {
                    $($key => {
                        self.$($field).+ = $crate::kv::KvValue::parse_value(value)
                            .map_err(|e| $crate::error::Error::Config(format!("{key}: {e}")))?;
                        Ok(true)
                    })*
                    _ => Ok(false),
                }
            }
        }
    };
}
pub(crate) use kv_fields;

/// Entries of `fields` with every key prefixed.
pub fn prefixed(prefix: &str, fields: &impl KvFields) -> Vec<(String, String)> {
    fields
        .kv_pairs()
        .into_iter()
        .map(|(k, v)| (format!("{prefix}{k}"), v))
        .collect()
}
