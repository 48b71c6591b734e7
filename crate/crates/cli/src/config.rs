// SPDX-License-Identifier: MIT OR Apache-2.0

//! `--config` JSON files. Keys are long flag names with `-` or `_`;
//! explicit flags override them and defaults fill the rest.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

#[derive(Debug, Default)]
pub struct FileConfig {
    values: Map<String, Value>,
}

fn normalize(key: &str) -> String {
    key.replace('-', "_")
}

impl FileConfig {
    pub fn load(path: Option<&Path>, known: &[&str]) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {} is not valid JSON: {e}", path.display())))?;
        let Value::Object(raw) = value else {
            return Err(CliError::usage("config file must hold a JSON object"));
        };
        let mut values = Map::new();
        for (k, v) in raw {
            let k = normalize(&k);
            if !known.iter().any(|n| normalize(n) == k) {
                return Err(CliError::usage(format!("unknown config key {k:?}")));
            }
            values.insert(k, v);
        }
        Ok(Self { values })
    }

    /// Flag, else config value, else `None`.
    pub fn pick_opt<T: DeserializeOwned>(&self, key: &str, flag: Option<T>) -> CliResult<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(&normalize(key)) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| CliError::usage(format!("config key {key:?}: {e}"))),
        }
    }

    pub fn pick<T: DeserializeOwned>(&self, key: &str, flag: Option<T>, default: T) -> CliResult<T> {
        Ok(self.pick_opt(key, flag)?.unwrap_or(default))
    }

    pub fn require<T: DeserializeOwned>(&self, key: &str, flag: Option<T>) -> CliResult<T> {
        self.pick_opt(key, flag)?
            .ok_or_else(|| CliError::usage(format!("missing required --{}", key.replace('_', "-"))))
    }
}
