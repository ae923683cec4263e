//! INI run configuration: `[section]` headers, `key = value` lines and `#`
//! comments.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;

use crate::CliError;

pub const GLOBAL: &str = "global";
pub const SECTIONS: [&str; 7] = [
    GLOBAL,
    "verify-ot",
    "train",
    "sweep",
    "nfe-compare",
    "bounds",
    "gradcheck",
];
pub const GLOBAL_KEYS: [&str; 3] = ["seed", "out_dir", "precision"];

#[derive(Clone, Debug, Default)]
pub struct Config {
    sections: BTreeMap<String, BTreeMap<String, String>>,
    /// Relative paths in values resolve against this directory.
    base_dir: PathBuf,
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: PathBuf) -> Result<Self, CliError> {
        let ini = Ini::load_from_str(text).map_err(|e| config_error(e.to_string()))?;
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for (name, props) in ini.iter() {
            let Some(name) = name else {
                if props.iter().next().is_some() {
                    return Err(config_error("keys must appear inside a [section]"));
                }
                continue;
            };
            if !SECTIONS.contains(&name) {
                return Err(config_error(format!("unknown section [{name}]")));
            }
            let entry = sections.entry(name.to_string()).or_default();
            for (k, v) in props.iter() {
                if entry.insert(k.to_string(), v.trim().to_string()).is_some() {
                    return Err(config_error(format!("duplicate key `{k}` in [{name}]")));
                }
            }
        }
        Ok(Self { sections, base_dir })
    }

    pub fn section<'a>(&'a self, name: &'a str) -> Section<'a> {
        static EMPTY: BTreeMap<String, String> = BTreeMap::new();
        Section {
            name,
            values: self.sections.get(name).unwrap_or(&EMPTY),
            base_dir: &self.base_dir,
        }
    }

    /// Rejects keys of `section` that are not in `allowed`.
    pub fn check_keys(&self, section: &str, allowed: &[&str]) -> Result<(), CliError> {
        let allowed: BTreeSet<&str> = allowed.iter().copied().collect();
        if let Some(values) = self.sections.get(section) {
            if let Some(k) = values.keys().find(|k| !allowed.contains(k.as_str())) {
                return Err(config_error(format!("unknown key `{k}` in [{section}]")));
            }
        }
        Ok(())
    }

    /// Overrides one value, as the command-line flags do.
    pub fn set(&mut self, section: &str, key: &str, value: String) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value);
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    /// Every parsed value, for the run manifest.
    pub fn echo(&self) -> &BTreeMap<String, BTreeMap<String, String>> {
        &self.sections
    }
}

#[derive(Clone, Copy)]
pub struct Section<'a> {
    name: &'a str,
    values: &'a BTreeMap<String, String>,
    base_dir: &'a Path,
}

impl<'a> Section<'a> {
    pub fn raw(&self, key: &str) -> Option<&'a str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| config_error(format!("[{}] {key} = `{v}`: {e}", self.name)))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<T>()
                            .map_err(|e| config_error(format!("[{}] {key}: `{s}`: {e}", self.name)))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn list_or<T: FromStr>(&self, key: &str, default: &[T]) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
        T: Clone,
    {
        Ok(self.list(key)?.unwrap_or_else(|| default.to_vec()))
    }

    /// Comma-separated paths resolved against the config file's directory;
    /// each must exist.
    pub fn paths(&self, key: &str) -> Result<Option<Vec<PathBuf>>, CliError> {
        let Some(items) = self.list::<String>(key)? else {
            return Ok(None);
        };
        items
            .into_iter()
            .map(|p| {
                let path = self.base_dir.join(&p);
                if path.exists() {
                    Ok(path)
                } else {
                    Err(config_error(format!(
                        "[{}] {key}: `{}` does not exist",
                        self.name,
                        path.display()
                    )))
                }
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }
}
