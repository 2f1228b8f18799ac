//! `key = value` run configuration files.
//!
//! Keys are the long flag names without dashes. Blank lines and lines
//! starting with `#` are ignored. A flag given on the command line wins over
//! the file, which wins over the built-in default.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use lemart::{Error, Result};

#[derive(Debug, Default)]
pub struct Resolver {
    file: BTreeMap<String, String>,
    effective: Vec<(String, String)>,
}

pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Usage(format!("config line {}: expected `key = value`", n + 1)));
        };
        let key = k.trim().to_string();
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Usage(format!("config line {}: duplicate key `{key}`", n + 1)));
        }
    }
    Ok(map)
}

impl Resolver {
    pub fn new(config: Option<&Path>) -> Result<Self> {
        let file = match config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Self {
            file,
            effective: Vec::new(),
        })
    }

    /// Resolves `key` from the flag, the file or `default`, in that order.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match (flag, self.file.remove(key)) {
            (Some(v), _) => v,
            (None, Some(raw)) => raw
                .parse()
                .map_err(|e| Error::Usage(format!("config key `{key}`: cannot parse `{raw}`: {e}")))?,
            (None, None) => default,
        };
        self.effective.push((key.to_string(), value.to_string()));
        Ok(value)
    }

    /// Like [`get`](Self::get), but left out of [`render`](Self::render).
    /// For settings that must not change outputs, such as thread counts.
    pub fn get_unechoed<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = self.get(key, flag, default)?;
        self.effective.pop();
        Ok(value)
    }

    /// Like [`get`](Self::get) for settings without a default.
    pub fn get_opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match (flag, self.file.remove(key)) {
            (Some(v), _) => Some(v),
            (None, Some(raw)) => Some(
                raw.parse()
                    .map_err(|e| Error::Usage(format!("config key `{key}`: cannot parse `{raw}`: {e}")))?,
            ),
            (None, None) => None,
        };
        if let Some(v) = &value {
            self.effective.push((key.to_string(), v.to_string()));
        }
        Ok(value)
    }

    /// Like [`get_opt`](Self::get_opt) but missing is a usage error.
    pub fn require<T>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.get_opt(key, flag)?
            .ok_or_else(|| Error::Usage(format!("missing required setting `--{key}`")))
    }

    /// Fails on config keys nobody asked for.
    pub fn finish(&mut self) -> Result<()> {
        if let Some(key) = self.file.keys().next() {
            return Err(Error::Usage(format!("unknown config key `{key}` for this command")));
        }
        Ok(())
    }

    /// The resolved settings as a config file.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.effective {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_flag_file_default() {
        let mut r = Resolver {
            file: parse_config("# run\nseed = 7\nratio = 0.3\n").unwrap(),
            effective: Vec::new(),
        };
        assert_eq!(r.get("seed", Some(9u64), 0).unwrap(), 9);
        assert_eq!(r.get("ratio", None, 0.5f64).unwrap(), 0.3);
        assert_eq!(r.get("partition", None, 8usize).unwrap(), 8);
        r.finish().unwrap();
        assert_eq!(r.render(), "seed = 9\nratio = 0.3\npartition = 8\n");
    }

    #[test]
    fn rejects_bad_files() {
        assert!(parse_config("novalue").is_err());
        assert!(parse_config("a = 1\na = 2").is_err());
        let mut r = Resolver {
            file: parse_config("bogus = 1").unwrap(),
            effective: Vec::new(),
        };
        assert!(matches!(r.finish(), Err(Error::Usage(_))));
        let mut r = Resolver {
            file: parse_config("seed = x").unwrap(),
            effective: Vec::new(),
        };
        assert!(r.get("seed", None, 0u64).is_err());
    }
}
