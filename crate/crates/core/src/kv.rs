//! `key=value` line blocks used to make binary files self-describing.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvBlock(BTreeMap<String, String>);

impl KvBlock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value, got `{line}`", i + 1))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, String>
    where
        T::Err: Display,
    {
        let raw = self.0.get(key).ok_or_else(|| format!("missing key `{key}`"))?;
        raw.parse().map_err(|e| format!("key `{key}`: {e}"))
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, String>
    where
        T::Err: Display,
    {
        match self.0.get(key) {
            None => Ok(None),
            Some(_) => self.get(key).map(Some),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }
}

impl Display for KvBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (k, v) in &self.0 {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let mut b = KvBlock::new();
        b.set("a.x", 3);
        b.set("b", "hello");
        b.set("c", 1e-10);
        let text = b.to_string();
        let back = KvBlock::parse(&text).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.get::<usize>("a.x").unwrap(), 3);
        assert_eq!(back.get::<f64>("c").unwrap(), 1e-10);
        assert!(back.get::<usize>("b").is_err());
        assert!(back.get::<usize>("zzz").unwrap_err().contains("zzz"));
        assert_eq!(back.get_opt::<usize>("q").unwrap(), None);
        assert!(KvBlock::parse("novalue").is_err());
    }
}
