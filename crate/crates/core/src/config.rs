//! Plain `key=value` text configs.
//!
//! One entry per line; blank lines and lines starting with `#` are ignored.
//! Keys are unique within a file.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut entries: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| Error::Config {
            line,
            message: format!("expected key=value, got {trimmed:?}"),
        })?;
        let key = key.trim().to_owned();
        if key.is_empty() {
            return Err(Error::Config {
                line,
                message: "empty key".into(),
            });
        }
        if let Some(prev) = entries.iter().find(|e| e.key == key) {
            return Err(Error::Config {
                line,
                message: format!("key {key} already set on line {}", prev.line),
            });
        }
        entries.push(Entry {
            line,
            key,
            value: value.trim().to_owned(),
        });
    }
    Ok(entries)
}

impl Entry {
    pub fn error(&self, message: impl std::fmt::Display) -> Error {
        Error::Config {
            line: self.line,
            message: format!("{}: {message}", self.key),
        }
    }

    /// Attach this entry's key and line to an error raised while
    /// interpreting its value.
    pub fn context(&self, err: Error) -> Error {
        match err {
            Error::InvalidArgument(m) => self.error(m),
            Error::Config { .. } => err,
            other => self.error(other),
        }
    }

    pub fn parse<T: std::str::FromStr>(&self) -> Result<T> {
        self.value
            .parse()
            .map_err(|_| self.error(format!("cannot parse {:?}", self.value)))
    }

    pub fn parse_bool(&self) -> Result<bool> {
        match self.value.as_str() {
            "true" | "TRUE" | "1" | "yes" => Ok(true),
            "false" | "FALSE" | "0" | "no" => Ok(false),
            _ => Err(self.error(format!("expected true or false, got {:?}", self.value))),
        }
    }

    pub fn list(&self) -> Vec<&str> {
        self.value
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_skips_comments() {
        let e = parse("# header\n\nreps = 10\nlearners=logit, gam\n").unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].line, 3);
        assert_eq!(e[0].parse::<usize>().unwrap(), 10);
        assert_eq!(e[1].list(), vec!["logit", "gam"]);
    }

    #[test]
    fn reports_line_numbers() {
        let err = parse("a=1\nnonsense\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = parse("a=1\na=2\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
