//! Settings resolution: command-line flags, then the config file, then
//! built-in defaults.

use std::path::Path;

use toml::{Table, Value};

use crate::CliError;

#[derive(Debug, Default)]
pub struct ConfigFile {
    table: Table,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let table = text
            .parse::<Table>()
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self { table })
    }

    fn get(&self, key: &str) -> Option<&Value> {
        self.table.get(key).or_else(|| self.table.get(&key.replace('-', "_")))
    }

    fn bad(key: &str, want: &str) -> CliError {
        CliError::Config(format!("key `{key}` must be {want}"))
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Float(f)) => Ok(Some(*f)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(_) => Err(Self::bad(key, "a number")),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::Float(f) => Ok(*f),
                    Value::Integer(i) => Ok(*i as f64),
                    _ => Err(Self::bad(key, "a list of numbers")),
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(_) => self.f64(key).map(|v| v.map(|x| vec![x])),
        }
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(_) => Err(Self::bad(key, "a non-negative integer")),
        }
    }

    pub fn usize_list(&self, key: &str) -> Result<Option<Vec<usize>>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::Integer(i) if *i >= 0 => Ok(*i as usize),
                    _ => Err(Self::bad(key, "a list of non-negative integers")),
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(_) => self.u64(key).map(|v| v.map(|x| vec![x as usize])),
        }
    }

    pub fn string(&self, key: &str) -> Result<Option<String>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(Value::Float(f)) => Ok(Some(f.to_string())),
            Some(_) => Err(Self::bad(key, "a string")),
        }
    }

    pub fn bool(&self, key: &str) -> Result<Option<bool>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(_) => Err(Self::bad(key, "true or false")),
        }
    }
}

/// `flag`, else the config value, else `default`.
pub fn resolve<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
