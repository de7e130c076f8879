//! Plain-text `key=value` files: one pair per line, `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvMap {
    entries: BTreeMap<String, (String, usize)>,
}

impl KvMap {
    pub fn new() -> Self {
        KvMap::default()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut map = KvMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, i + 1, format!("expected key=value, got {line:?}")))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::parse(path, i + 1, "empty key"));
            }
            if map.entries.contains_key(k) {
                return Err(Error::parse(path, i + 1, format!("duplicate key '{k}'")));
            }
            map.entries.insert(k.to_string(), (v.trim().to_string(), i + 1));
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        KvMap::parse(&std::fs::read_to_string(path)?, path)
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), (value.to_string(), 0));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, (v, _))| (k.as_str(), v.as_str()))
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing key '{key}'")))
    }

    pub fn parse_value<V: std::str::FromStr>(&self, key: &str) -> Result<Option<V>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("invalid value {v:?} for '{key}'"))),
        }
    }

    pub fn parse_list<V: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<V>>> {
        match self.get(key) {
            None => Ok(None),
            Some("") => Ok(Some(Vec::new())),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("invalid list entry {s:?} for '{key}'")))
                })
                .collect::<Result<Vec<V>>>()
                .map(Some),
        }
    }

    /// Fails on the first key not in `allowed`.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        for (k, (_, line)) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown key '{k}' (line {line})")));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, (v, _)) in &self.entries {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

pub fn join_list<V: ToString>(values: &[V]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_lists() {
        let m = KvMap::parse("# header\na = 1\nlist=1, 2,3 # trailing\n\n", Path::new("c")).unwrap();
        assert_eq!(m.parse_value::<u32>("a").unwrap(), Some(1));
        assert_eq!(m.parse_list::<u32>("list").unwrap(), Some(vec![1, 2, 3]));
        assert_eq!(m.get("missing"), None);
        assert!(m.reject_unknown(&["a"]).is_err());
        assert!(m.reject_unknown(&["a", "list"]).is_ok());
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(KvMap::parse("novalue\n", Path::new("c")).is_err());
        assert!(KvMap::parse("a=1\na=2\n", Path::new("c")).is_err());
        let m = KvMap::parse("a=x\n", Path::new("c")).unwrap();
        assert!(m.parse_value::<f64>("a").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut m = KvMap::new();
        m.insert("b", 2.5);
        m.insert("a", "x,y");
        let back = KvMap::parse(&m.to_text(), Path::new("c")).unwrap();
        assert_eq!(back.get("a"), Some("x,y"));
        assert_eq!(back.parse_value::<f64>("b").unwrap(), Some(2.5));
    }
}
