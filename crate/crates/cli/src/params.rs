use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::UsageError;

/// Named parameters of one subcommand. Only declared keys can be set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Params {
    values: BTreeMap<String, String>,
}

impl Params {
    pub fn new(defaults: &[(&str, &str)]) -> Self {
        Self {
            values: defaults.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> Result<(), UsageError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(UsageError(format!(
                "unknown parameter `{key}`; known: {}",
                self.values.keys().cloned().collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    /// `key=value`.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), UsageError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| UsageError(format!("expected key=value, got `{pair}`")))?;
        self.set(k.trim(), v.trim())
    }

    /// `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_config(&mut self, text: &str) -> Result<(), UsageError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.set_pair(line).map_err(|e| UsageError(format!("config line {}: {}", i + 1, e.0)))?;
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("parameter `{key}` not declared"))
    }

    pub fn get<T>(&self, key: &str) -> Result<T, UsageError>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.parse().map_err(|e| UsageError(format!("parameter `{key}` = `{raw}`: {e}")))
    }

    /// `auto` maps to `None`.
    pub fn get_opt<T>(&self, key: &str) -> Result<Option<T>, UsageError>
    where
        T: FromStr,
        T::Err: Display,
    {
        if self.raw(key) == "auto" {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    pub fn get_list(&self, key: &str) -> Result<Vec<f64>, UsageError> {
        parse_floats(self.raw(key)).map_err(|e| UsageError(format!("parameter `{key}`: {}", e.0)))
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}

/// Comma-separated floats.
pub fn parse_floats(s: &str) -> Result<Vec<f64>, UsageError> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| UsageError(format!("`{t}`: {e}"))))
        .collect()
}

pub fn parse_fixed<const N: usize>(s: &str) -> Result<[f64; N], UsageError> {
    let v = parse_floats(s)?;
    v.try_into()
        .map_err(|v: Vec<f64>| UsageError(format!("expected {N} comma-separated numbers, got {}", v.len())))
}
