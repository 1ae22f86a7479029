use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{IoError, Result};

/// Key naming the asynchronous backend.
pub const BE_ASYNC: &str = "be.async";
/// Key naming the synchronous backend.
pub const BE_SYNC: &str = "be.sync";
/// Worker count for the `thrpool` backend.
pub const THRPOOL_WORKERS: &str = "thrpool.workers";
/// log2 of the logical block size used for file-backed devices.
pub const FILE_LBADS: &str = "file.lbads";

/// Lowest-precedence default for [`BE_ASYNC`].
pub const ENV_BACKEND: &str = "CROSSIO_BE";

/// Device-open options as string key/value pairs.
///
/// An absent key leaves the choice to the library; a present key is binding.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Options {
    entries: BTreeMap<String, String>,
}

pub fn options_default() -> Options {
    Options::default()
}

pub fn options_parse(text: &str) -> Result<Options> {
    text.parse()
}

fn valid_token(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'/' | b':' | b'-'))
}

impl Options {
    pub fn new() -> Options {
        Options::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) -> Result<&mut Self> {
        let (key, value) = (key.into(), value.into());
        if !valid_token(&key) || !valid_token(&value) {
            return Err(IoError::inval(format!(
                "invalid option pair {key:?}={value:?}"
            )));
        }
        self.entries.insert(key, value);
        Ok(self)
    }

    /// Builder-style [`set`](Self::set) for keys known to be well formed.
    pub fn with(mut self, key: &str, value: &str) -> Result<Self> {
        self.set(key, value)?;
        Ok(self)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Parses an integer-valued key; absent keys yield `None`.
    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| IoError::inval(format!("option {key}={v} is not an integer"))),
        }
    }
}

impl FromStr for Options {
    type Err = IoError;

    fn from_str(text: &str) -> Result<Options> {
        let mut opts = Options::new();
        if text.is_empty() {
            return Ok(opts);
        }
        for pair in text.split(',') {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| IoError::inval(format!("option {pair:?} lacks '='")))?;
            opts.set(key, value)?;
        }
        Ok(opts)
    }
}

impl fmt::Display for Options {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}
