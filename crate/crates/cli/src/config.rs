//! Resolved run configuration: built-in defaults, then `key=value` lines from
//! a config file (later keys win), then flags given on the command line.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::Failure;

/// One configurable value of a subcommand; doubles as a `--name` flag.
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

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn defaults(keys: &[Key]) -> Self {
        Self {
            values: keys
                .iter()
                .map(|k| (k.name.to_string(), k.default.to_string()))
                .collect(),
        }
    }

    /// Apply `key=value` lines. Blank lines and lines starting with `#` are
    /// skipped; keys must be known.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), Failure> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Failure::input(format!(
                    "{origin}:{}: expected key=value, got `{line}`",
                    no + 1
                )));
            };
            self.set(k.trim(), v.trim())
                .map_err(|e| Failure::input(format!("{origin}:{}: {}", no + 1, e.message)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::input(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn set(&mut self, k: &str, v: &str) -> Result<(), Failure> {
        match self.values.get_mut(k) {
            Some(slot) => {
                *slot = v.to_string();
                Ok(())
            }
            None => Err(Failure::input(format!("unknown key `{k}`"))),
        }
    }

    pub fn raw(&self, k: &str) -> &str {
        self.values
            .get(k)
            .unwrap_or_else(|| panic!("key `{k}` is not declared"))
    }

    pub fn get<T: FromStr>(&self, k: &str) -> Result<T, Failure>
    where
        T::Err: Display,
    {
        let raw = self.raw(k);
        raw.parse()
            .map_err(|e| Failure::input(format!("--{k}: cannot parse `{raw}`: {e}")))
    }

    /// Comma-separated list; empty string gives an empty list.
    pub fn list<T: FromStr>(&self, k: &str) -> Result<Vec<T>, Failure>
    where
        T::Err: Display,
    {
        let raw = self.raw(k).trim();
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|e| Failure::input(format!("--{k}: cannot parse `{s}`: {e}")))
            })
            .collect()
    }

    /// `# polygrain <command> k=v ...` with keys in sorted order.
    pub fn comment_line(&self, command: &str) -> String {
        let mut line = format!("# polygrain {command}");
        for (k, v) in &self.values {
            line.push_str(&format!(" {k}={v}"));
        }
        line
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEYS: &[Key] = &[
        key("lambda", "1", "penalty ratio"),
        key("angles", "8,4", "angles"),
        key("seed", "0", "seed"),
    ];

    #[test]
    fn later_keys_win_and_comments_are_skipped() {
        let mut s = Settings::defaults(KEYS);
        s.apply_text("# note\nlambda = 2\n\nlambda=3\nangles=1, 2 ,3\n", "cfg")
            .unwrap();
        assert_eq!(s.get::<f64>("lambda").unwrap(), 3.0);
        assert_eq!(s.list::<f64>("angles").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(s.get::<u64>("seed").unwrap(), 0);
    }

    #[test]
    fn bad_lines_and_keys_are_input_errors() {
        let mut s = Settings::defaults(KEYS);
        let e = s.apply_text("lambda 2", "cfg").unwrap_err();
        assert_eq!(e.code, 1);
        assert!(e.message.contains("cfg:1"));
        let e = s.apply_text("ok=1\nmu=2", "cfg").unwrap_err();
        assert!(e.message.contains("unknown key `ok`"));
        s.set("lambda", "x").unwrap();
        assert!(s
            .get::<f64>("lambda")
            .unwrap_err()
            .message
            .contains("--lambda"));
    }

    #[test]
    fn comment_line_is_sorted() {
        let s = Settings::defaults(KEYS);
        assert_eq!(
            s.comment_line("gtable"),
            "# polygrain gtable angles=8,4 lambda=1 seed=0"
        );
        assert!(
            Settings::defaults(KEYS)
                .list::<f64>("angles")
                .unwrap()
                .len()
                == 2
        );
        let mut e = Settings::defaults(KEYS);
        e.set("angles", "").unwrap();
        assert!(e.list::<f64>("angles").unwrap().is_empty());
    }
}
