//! Grid-level file addresses.
//!
//! A [`GridUri`] is `scheme://host[:port]/path` restricted to three schemes.
//! `gridftp` is accepted as an alias of `gsiftp`. The canonical form lowercases
//! scheme and host and keeps the path verbatim. Query strings, fragments,
//! userinfo and percent-encoding are not part of the grammar.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Default port assumed for `gsiftp` endpoints when the URI omits one.
pub const GSIFTP_DEFAULT_PORT: u16 = 2811;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    File,
    Gsiftp,
    Http,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::File => "file",
            Scheme::Gsiftp => "gsiftp",
            Scheme::Http => "http",
        }
    }

    /// Schemes a job may write results to.
    pub fn is_writable(self) -> bool {
        matches!(self, Scheme::File | Scheme::Gsiftp)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed URI {text:?}: {reason}")]
pub struct MalformedUri {
    pub text: String,
    pub reason: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridUri {
    scheme: Scheme,
    host: String,
    port: Option<u16>,
    path: String,
}

fn path_char_ok(c: char) -> bool {
    !c.is_whitespace() && !c.is_control() && c != '"' && c != '?' && c != '#'
}

fn host_char_ok(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '-' || c == '.' || c == '_'
}

impl GridUri {
    /// Builds a URI from parts, enforcing the same rules as [`parse_grid_uri`].
    pub fn new(
        scheme: Scheme,
        host: impl Into<String>,
        port: Option<u16>,
        path: impl Into<String>,
    ) -> Result<Self, MalformedUri> {
        let host = host.into().to_ascii_lowercase();
        let path = path.into();
        let err = |reason| MalformedUri {
            text: format!("{}://{}{}", scheme.as_str(), host, path),
            reason,
        };
        if scheme == Scheme::File {
            if !host.is_empty() {
                return Err(err("file URIs must not name a host"));
            }
            if port.is_some() {
                return Err(err("file URIs must not carry a port"));
            }
        } else if host.is_empty() {
            return Err(err("missing host"));
        }
        if !host.chars().all(host_char_ok) {
            return Err(err("invalid host"));
        }
        if port == Some(0) {
            return Err(err("invalid port"));
        }
        if path.is_empty() {
            return Err(err("missing path"));
        }
        if !path.starts_with('/') {
            return Err(err("relative path"));
        }
        if !path.chars().all(path_char_ok) {
            return Err(err("invalid character in path"));
        }
        Ok(GridUri {
            scheme,
            host,
            port,
            path,
        })
    }

    pub fn file(path: impl Into<String>) -> Result<Self, MalformedUri> {
        Self::new(Scheme::File, "", None, path)
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn host(&self) -> &str {
        &self.host
    }

    pub fn port(&self) -> Option<u16> {
        self.port
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    /// `host:port` for network schemes, filling in the scheme default.
    pub fn authority(&self) -> Option<String> {
        let default = match self.scheme {
            Scheme::File => return None,
            Scheme::Gsiftp => GSIFTP_DEFAULT_PORT,
            Scheme::Http => 80,
        };
        Some(format!("{}:{}", self.host, self.port.unwrap_or(default)))
    }

    /// Appends path segments, treating `self` as a directory.
    pub fn join(&self, segment: &str) -> Result<Self, MalformedUri> {
        let mut path = self.path.trim_end_matches('/').to_string();
        for part in segment.split('/').filter(|s| !s.is_empty()) {
            path.push('/');
            path.push_str(part);
        }
        if segment.ends_with('/') {
            path.push('/');
        }
        if path.is_empty() {
            path.push('/');
        }
        Self::new(self.scheme, self.host.clone(), self.port, path)
    }

    /// The URI with a trailing `/`, i.e. naming a directory.
    pub fn as_dir(&self) -> Self {
        if self.path.ends_with('/') {
            return self.clone();
        }
        let mut out = self.clone();
        out.path.push('/');
        out
    }

    /// Last non-empty path segment.
    pub fn file_name(&self) -> Option<&str> {
        self.path.split('/').rfind(|s| !s.is_empty())
    }
}

/// Parses `text` into a [`GridUri`].
pub fn parse_grid_uri(text: &str) -> Result<GridUri, MalformedUri> {
    let err = |reason| MalformedUri {
        text: text.to_string(),
        reason,
    };
    if text.is_empty() {
        return Err(err("empty"));
    }
    let (scheme_text, rest) = text
        .split_once("://")
        .ok_or_else(|| err("missing scheme"))?;
    let scheme = match scheme_text.to_ascii_lowercase().as_str() {
        "file" => Scheme::File,
        "gsiftp" | "gridftp" => Scheme::Gsiftp,
        "http" => Scheme::Http,
        _ => return Err(err("unknown scheme")),
    };
    let (authority, path) = match rest.find('/') {
        Some(i) => rest.split_at(i),
        None => return Err(err("missing path")),
    };
    if authority.contains('@') {
        return Err(err("userinfo is not supported"));
    }
    let (host, port) = match authority.rsplit_once(':') {
        Some((h, p)) => {
            let port: u16 = p.parse().map_err(|_| err("invalid port"))?;
            if port == 0 {
                return Err(err("invalid port"));
            }
            (h, Some(port))
        }
        None => (authority, None),
    };
    GridUri::new(scheme, host, port, path).map_err(|e| err(e.reason))
}

/// Canonical text of `uri`.
pub fn format_grid_uri(uri: &GridUri) -> String {
    uri.to_string()
}

impl fmt::Display for GridUri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}://{}", self.scheme.as_str(), self.host)?;
        if let Some(port) = self.port {
            write!(f, ":{port}")?;
        }
        f.write_str(&self.path)
    }
}

impl FromStr for GridUri {
    type Err = MalformedUri;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_grid_uri(s)
    }
}

impl Serialize for GridUri {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GridUri {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_grid_uri(&text).map_err(serde::de::Error::custom)
    }
}
