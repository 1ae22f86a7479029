use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{IoError, Result};

/// The device classes a backend may serve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IdentClass {
    Ram,
    File,
}

/// Geometry parameters carried by a `ram:` URI query string.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RamParams {
    pub nsect: Option<u64>,
    pub lbads: Option<u32>,
    pub zones: Option<u32>,
}

impl RamParams {
    pub fn is_empty(&self) -> bool {
        self.nsect.is_none() && self.lbads.is_none() && self.zones.is_none()
    }
}

/// A parsed device identifier.
///
/// Accepted forms are `ram:<name>[?nsect=N&lbads=B&zones=Z]`, `file:<path>`,
/// and bare filesystem paths, which are treated as `file:`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeviceIdent {
    Ram { name: String, params: RamParams },
    File { path: PathBuf },
}

impl DeviceIdent {
    pub fn parse(uri: &str) -> Result<DeviceIdent> {
        uri.parse()
    }

    pub fn ram(name: impl Into<String>) -> DeviceIdent {
        DeviceIdent::Ram {
            name: name.into(),
            params: RamParams::default(),
        }
    }

    pub fn file(path: impl Into<PathBuf>) -> DeviceIdent {
        DeviceIdent::File { path: path.into() }
    }

    pub fn class(&self) -> IdentClass {
        match self {
            DeviceIdent::Ram { .. } => IdentClass::Ram,
            DeviceIdent::File { .. } => IdentClass::File,
        }
    }

    /// The URI without any query parameters.
    pub fn base_uri(&self) -> String {
        match self {
            DeviceIdent::Ram { name, .. } => format!("ram:{name}"),
            DeviceIdent::File { path } => format!("file:{}", path.display()),
        }
    }
}

fn parse_positive<T>(key: &str, value: &str) -> Result<T>
where
    T: FromStr + PartialOrd + Default,
{
    match value.parse::<T>() {
        Ok(v) if v > T::default() => Ok(v),
        _ => Err(IoError::inval(format!(
            "ram parameter {key}={value} is not a positive integer"
        ))),
    }
}

fn parse_ram(rest: &str) -> Result<DeviceIdent> {
    let (name, query) = match rest.split_once('?') {
        Some((name, query)) => (name, Some(query)),
        None => (rest, None),
    };
    if name.is_empty() || name.contains(['/', '&', '=']) {
        return Err(IoError::inval(format!("invalid ram device name {name:?}")));
    }
    let mut params = RamParams::default();
    if let Some(query) = query.filter(|q| !q.is_empty()) {
        for pair in query.split('&') {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| IoError::inval(format!("ram parameter {pair:?} lacks '='")))?;
            match key {
                "nsect" => params.nsect = Some(parse_positive(key, value)?),
                "lbads" => {
                    let lbads: u32 = parse_positive(key, value)?;
                    if !(9..=16).contains(&lbads) {
                        return Err(IoError::inval(format!("lbads={lbads} outside 9..=16")));
                    }
                    params.lbads = Some(lbads);
                }
                "zones" => params.zones = Some(parse_positive(key, value)?),
                other => return Err(IoError::inval(format!("unknown ram parameter {other:?}"))),
            }
        }
    }
    Ok(DeviceIdent::Ram {
        name: name.to_string(),
        params,
    })
}

impl FromStr for DeviceIdent {
    type Err = IoError;

    fn from_str(uri: &str) -> Result<DeviceIdent> {
        if uri.is_empty() {
            return Err(IoError::inval("empty device identifier"));
        }
        if let Some(rest) = uri.strip_prefix("ram:") {
            return parse_ram(rest);
        }
        let path = uri.strip_prefix("file:").unwrap_or(uri);
        if path.is_empty() {
            return Err(IoError::inval("empty file path"));
        }
        Ok(DeviceIdent::File {
            path: PathBuf::from(path),
        })
    }
}

impl fmt::Display for DeviceIdent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.base_uri())?;
        if let DeviceIdent::Ram { params, .. } = self {
            let mut sep = '?';
            for (key, value) in [
                ("nsect", params.nsect),
                ("lbads", params.lbads.map(u64::from)),
                ("zones", params.zones.map(u64::from)),
            ] {
                if let Some(value) = value {
                    write!(f, "{sep}{key}={value}")?;
                    sep = '&';
                }
            }
        }
        Ok(())
    }
}
