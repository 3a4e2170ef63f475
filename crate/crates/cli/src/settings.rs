//! Value resolution: command-line flag, then the subcommand's section of
//! the config file, then the built-in default.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Missing mandatory value; reported as a usage error.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Flag,
    File,
    Default,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Flag => "flag",
            Source::File => "config file",
            Source::Default => "default",
        })
    }
}

pub struct Resolver {
    section: &'static str,
    table: toml::Table,
    entries: Vec<(String, Value, Source)>,
}

impl Resolver {
    /// Reads `[section]` of `file`, if any.
    pub fn new(file: Option<&Path>, section: &'static str) -> Result<Self> {
        let mut table = toml::Table::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config file {}", path.display()))?;
            let mut doc: toml::Table = text
                .parse()
                .with_context(|| format!("invalid config file {}", path.display()))?;
            match doc.remove(section) {
                None => {}
                Some(toml::Value::Table(t)) => table = t,
                Some(_) => return Err(anyhow!("invalid config field `{section}`: must be a table")),
            }
        }
        Ok(Resolver {
            section,
            table,
            entries: Vec::new(),
        })
    }

    fn file_value<T: DeserializeOwned>(&mut self, key: &str) -> Result<Option<T>> {
        match self.table.remove(key) {
            None => Ok(None),
            Some(v) => v
                .try_into()
                .map(Some)
                .map_err(|e| anyhow!("invalid config field `{key}` in [{}]: {e}", self.section)),
        }
    }

    fn record<T: Serialize>(&mut self, key: &str, value: &T, source: Source) {
        let v = serde_json::to_value(value).expect("config values serialize");
        self.entries.push((key.to_string(), v, source));
    }

    pub fn get<T: Serialize + DeserializeOwned>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        let (v, src) = match (flag, self.file_value(key)?) {
            (Some(v), _) => (v, Source::Flag),
            (None, Some(v)) => (v, Source::File),
            (None, None) => (default, Source::Default),
        };
        self.record(key, &v, src);
        Ok(v)
    }

    pub fn optional<T: Serialize + DeserializeOwned>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        let found = match (flag, self.file_value(key)?) {
            (Some(v), _) => Some((v, Source::Flag)),
            (None, Some(v)) => Some((v, Source::File)),
            (None, None) => None,
        };
        match found {
            Some((v, src)) => {
                self.record(key, &v, src);
                Ok(Some(v))
            }
            None => {
                self.record(key, &Value::Null, Source::Default);
                Ok(None)
            }
        }
    }

    pub fn required<T: Serialize + DeserializeOwned>(&mut self, key: &str, flag: Option<T>) -> Result<T> {
        match self.optional(key, flag)? {
            Some(v) => Ok(v),
            None => Err(UsageError(format!(
                "`{key}` is required: pass --{} or set it under [{}] in the config file",
                key.replace('_', "-"),
                self.section
            ))
            .into()),
        }
    }

    /// Rejects unknown config keys, prints the resolved values and returns them.
    pub fn finish(self) -> Result<BTreeMap<String, Value>> {
        if let Some(key) = self.table.keys().next() {
            return Err(anyhow!("invalid config field `{key}` in [{}]: unknown key", self.section));
        }
        eprintln!("clickmil {} configuration:", self.section);
        let mut out = BTreeMap::new();
        for (key, value, source) in self.entries {
            eprintln!("  {key} = {value}  ({source})");
            out.insert(key, value);
        }
        Ok(out)
    }
}
