//! `key=value` run settings with a fixed schema per command.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A recognized key, its default and a one-line description.
#[derive(Clone, Copy, Debug)]
pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

pub const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key {
        name,
        default,
        help,
    }
}

/// Resolved settings of one command: defaults, then a config file, then
/// `--set` overrides. Keys outside the schema are rejected.
#[derive(Clone, Debug)]
pub struct Settings {
    command: String,
    schema: Vec<Key>,
    values: Vec<String>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl Settings {
    pub fn new(command: &str, schema: Vec<Key>) -> Self {
        Self {
            command: command.to_string(),
            values: schema.iter().map(|k| k.default.to_string()).collect(),
            schema,
        }
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn schema(&self) -> &[Key] {
        &self.schema
    }

    pub fn set(&mut self, name: &str, value: &str) -> Result<()> {
        let i = self
            .schema
            .iter()
            .position(|k| k.name == name)
            .ok_or_else(|| {
                config_err(format!(
                    "unknown key `{name}` for `{}`; known keys: {}",
                    self.command,
                    self.schema
                        .iter()
                        .map(|k| k.name)
                        .collect::<Vec<_>>()
                        .join(", ")
                ))
            })?;
        self.values[i] = value.trim().to_string();
        Ok(())
    }

    /// Applies one `key=value` assignment.
    pub fn assign(&mut self, item: &str) -> Result<()> {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| config_err(format!("expected key=value, got `{item}`")))?;
        self.set(k.trim(), v)
    }

    /// Applies a config text: one assignment per line, `#` comments and
    /// blank lines ignored. A `command` line must name this command.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                config_err(format!(
                    "{origin}:{}: expected key=value, got `{line}`",
                    n + 1
                ))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k == "command" {
                if v != self.command {
                    return Err(config_err(format!(
                        "{origin}:{}: config is for `{v}`, not `{}`",
                        n + 1,
                        self.command
                    )));
                }
                continue;
            }
            self.set(k, v)
                .map_err(|e| config_err(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn raw(&self, name: &str) -> &str {
        let i = self
            .schema
            .iter()
            .position(|k| k.name == name)
            .unwrap_or_else(|| panic!("`{name}` is not in the `{}` schema", self.command));
        &self.values[i]
    }

    pub fn get<T: FromStr>(&self, name: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let v = self.raw(name);
        v.parse()
            .map_err(|e| config_err(format!("bad value `{v}` for `{name}`: {e}")))
    }

    /// Comma-separated list; empty text gives an empty list.
    pub fn list<T: FromStr>(&self, name: &str) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        let v = self.raw(name);
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| config_err(format!("bad item `{s}` in `{name}`: {e}")))
            })
            .collect()
    }

    /// Config text that reproduces this run when fed back to the command.
    pub fn manifest(&self) -> String {
        let mut s = format!(
            "# paon {} manifest\n# rerun: paon replay <this file> --out <dir>\ncommand={}\n",
            env!("CARGO_PKG_VERSION"),
            self.command
        );
        for (k, v) in self.schema.iter().zip(&self.values) {
            s.push_str(k.name);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    /// Schema listing for `--help`-style output.
    pub fn describe(schema: &[Key]) -> String {
        let width = schema
            .iter()
            .map(|k| k.name.len() + k.default.len() + 1)
            .max()
            .unwrap_or(0);
        schema
            .iter()
            .map(|k| {
                format!(
                    "  {:<width$}  {}\n",
                    format!("{}={}", k.name, k.default),
                    k.help
                )
            })
            .collect()
    }
}

/// The `command` line of a manifest.
pub fn manifest_command(text: &str) -> Result<String> {
    text.lines()
        .map(str::trim)
        .find_map(|l| l.strip_prefix("command=").map(|c| c.trim().to_string()))
        .ok_or_else(|| config_err("manifest has no `command=` line"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: &[Key] = &[key("seed", "1", "seed"), key("sizes", "2,3", "sizes")];

    #[test]
    fn layering_and_rejection() {
        let mut s = Settings::new("demo", SCHEMA.to_vec());
        assert_eq!(s.get::<u64>("seed").unwrap(), 1);
        s.apply_text("# comment\n\nseed = 4\ncommand=demo\n", "cfg")
            .unwrap();
        s.assign("sizes=5, 6").unwrap();
        assert_eq!(s.get::<u64>("seed").unwrap(), 4);
        assert_eq!(s.list::<usize>("sizes").unwrap(), vec![5, 6]);
        assert!(s.assign("nope=1").is_err());
        assert!(s.apply_text("command=other\n", "cfg").is_err());
        assert!(s.apply_text("seed\n", "cfg").is_err());
        assert!(s.get::<bool>("seed").is_err());
    }

    #[test]
    fn manifest_round_trips() {
        let mut s = Settings::new("demo", SCHEMA.to_vec());
        s.assign("seed=9").unwrap();
        let text = s.manifest();
        assert_eq!(manifest_command(&text).unwrap(), "demo");
        let mut t = Settings::new("demo", SCHEMA.to_vec());
        t.apply_text(&text, "m").unwrap();
        assert_eq!(t.manifest(), text);
    }
}
