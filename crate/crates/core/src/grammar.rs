//! `kind[:key=value,...]` strings used for embedding, network and dataset
//! specs. Keys are case-sensitive; a key the consumer does not ask for is an
//! error when [`SpecString::finish`] runs.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{GeoError, Result};

#[derive(Debug, Clone)]
pub struct SpecString {
    source: String,
    pub kind: String,
    entries: BTreeMap<String, String>,
}

impl SpecString {
    pub fn parse(source: &str) -> Result<Self> {
        let source = source.trim();
        let (kind, rest) = match source.split_once(':') {
            Some((k, r)) => (k.trim(), Some(r)),
            None => (source, None),
        };
        if kind.is_empty() {
            return Err(GeoError::parse(source, "kind", "empty kind"));
        }
        let mut entries = BTreeMap::new();
        if let Some(rest) = rest {
            for item in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let (k, v) = item
                    .split_once('=')
                    .ok_or_else(|| GeoError::parse(source, item, "expected key=value"))?;
                let k = k.trim();
                if entries
                    .insert(k.to_string(), v.trim().to_string())
                    .is_some()
                {
                    return Err(GeoError::parse(source, k, "duplicate key"));
                }
            }
        }
        Ok(Self {
            source: source.to_string(),
            kind: kind.to_ascii_lowercase(),
            entries,
        })
    }

    /// Removes and parses `key` if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| GeoError::parse(&self.source, key, format!("bad value `{v}`: {e}"))),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Fails if any key was not consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            None => Ok(()),
            Some(k) => Err(GeoError::parse(
                &self.source,
                k,
                format!("unknown key for kind `{}`", self.kind),
            )),
        }
    }
}
