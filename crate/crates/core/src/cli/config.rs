//! Flat `key = value` configuration with command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use super::CliError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Parses `key = value` lines. Blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::validation(format!("config line {}: expected `key = value`", i + 1)))?;
            let key = normalize_key(key.trim());
            if key.is_empty() {
                return Err(CliError::validation(format!("config line {}: empty key", i + 1)));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies `--key value` or `--key=value` arguments; later values win.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<(), CliError> {
        let mut iter = args.iter();
        while let Some(arg) = iter.next() {
            let flag = arg
                .strip_prefix("--")
                .ok_or_else(|| CliError::validation(format!("unexpected argument `{arg}`")))?;
            let (key, value) = match flag.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let value = iter
                        .next()
                        .ok_or_else(|| CliError::validation(format!("flag `--{flag}` needs a value")))?;
                    (flag.to_string(), value.clone())
                }
            };
            self.values.insert(normalize_key(&key), value);
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(normalize_key(key), value.into());
    }

    /// Rejects keys outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), CliError> {
        let unknown: Vec<&str> = self
            .values
            .keys()
            .map(String::as_str)
            .filter(|k| !allowed.contains(k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::validation(format!("unknown key(s): {}", unknown.join(", "))))
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| parse_value(key, v))
            .transpose()
    }

    pub fn get_or<T>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T>(&self, key: &str) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(key)?
            .ok_or_else(|| CliError::validation(format!("missing required key `{key}`")))
    }

    pub fn flag(&self, key: &str, default: bool) -> Result<bool, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => match v.to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(CliError::validation(format!("key `{key}`: expected true or false, got `{v}`"))),
            },
        }
    }

    /// Comma-separated list.
    pub fn list<T>(&self, key: &str) -> Result<Option<Vec<T>>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_value(key, s))
                    .collect()
            })
            .transpose()
    }
}

fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

fn parse_value<T>(key: &str, value: &str) -> Result<T, CliError>
where
    T: FromStr,
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| CliError::validation(format!("key `{key}`: cannot parse `{value}`: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags() {
        let mut cfg = RunConfig::parse("# comment\nlambda = 0.5\n\nmethod=pooled\nn-groups = 3\n").unwrap();
        cfg.apply_overrides(&["--lambda".into(), "2".into(), "--gamma=4".into()]).unwrap();
        assert_eq!(cfg.require::<f64>("lambda").unwrap(), 2.0);
        assert_eq!(cfg.get::<f64>("gamma").unwrap(), Some(4.0));
        assert_eq!(cfg.raw("method"), Some("pooled"));
        assert_eq!(cfg.get::<usize>("n_groups").unwrap(), Some(3));
        assert!(cfg.check_keys(&["lambda", "gamma", "method", "n_groups"]).is_ok());
        assert!(cfg.check_keys(&["lambda"]).is_err());
    }

    #[test]
    fn malformed_inputs() {
        assert!(RunConfig::parse("lambda 0.5").is_err());
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_overrides(&["--lambda".into()]).is_err());
        assert!(cfg.apply_overrides(&["lambda".into(), "1".into()]).is_err());
        cfg.set("lambda", "abc");
        assert!(cfg.get::<f64>("lambda").is_err());
        assert!(cfg.require::<f64>("gamma").is_err());
    }

    #[test]
    fn lists_and_flags() {
        let cfg = RunConfig::parse("values = 1, 2,3\nstratify = no").unwrap();
        assert_eq!(cfg.list::<u32>("values").unwrap(), Some(vec![1, 2, 3]));
        assert!(!cfg.flag("stratify", true).unwrap());
        assert!(cfg.flag("other", true).unwrap());
    }
}
