//! Server configuration: a flat `key = value` file, each key overridable by
//! an `SMSTRACK_<KEY>` environment variable.
//!
//! ```text
//! listen = 127.0.0.1:8080
//! token_file = tokens.txt
//! store_path = data
//! transport = loopback          # none | loopback | at | http
//! loopback_scenario = fleet.toml
//! at_device = /dev/ttyUSB0
//! http_base_url = http://192.168.8.1:8080
//! timezone = Asia/Kuala_Lumpur
//! response_timeout_secs = 180
//! poll_interval_ms = 1000
//! ```

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use chrono_tz::Tz;

pub const KEYS: [&str; 10] = [
    "listen",
    "token_file",
    "store_path",
    "transport",
    "loopback_scenario",
    "at_device",
    "http_base_url",
    "timezone",
    "response_timeout_secs",
    "poll_interval_ms",
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("config {key}: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

fn err(key: &str, message: impl std::fmt::Display) -> ConfigError {
    ConfigError {
        key: key.to_owned(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportKind {
    /// No SMS link. Locate requests fail with 503.
    None,
    /// Virtual locators from a scenario file, on the wall clock.
    Loopback { scenario: PathBuf },
    /// Serial GSM modem speaking AT commands. The port must already be set
    /// to the right baud rate.
    At { device: PathBuf },
    /// Android SMS gateway app.
    Http { base_url: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerConfig {
    pub listen: SocketAddr,
    pub token_file: PathBuf,
    pub store_path: PathBuf,
    pub transport: TransportKind,
    pub timezone: Tz,
    pub response_timeout_secs: u64,
    pub poll_interval_ms: u64,
}

/// Parse `key = value` lines. `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut pairs = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(&format!("line {}", n + 1), "expected key = value"))?;
        let key = k.trim();
        if !KEYS.contains(&key) {
            return Err(err(key, format!("unknown key on line {}", n + 1)));
        }
        pairs.insert(key.to_owned(), v.trim().to_owned());
    }
    Ok(pairs)
}

pub fn env_var_name(key: &str) -> String {
    format!("SMSTRACK_{}", key.to_ascii_uppercase())
}

impl ServerConfig {
    /// Read `path`, apply overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::load_with(path, |k| std::env::var(k).ok())
    }

    pub fn load_with(path: &Path, env: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| err(&path.display().to_string(), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_pairs(parse_pairs(&text)?, base, env)
    }

    /// Relative paths resolve against `base`.
    pub fn from_pairs(
        mut pairs: BTreeMap<String, String>,
        base: &Path,
        env: impl Fn(&str) -> Option<String>,
    ) -> Result<Self, ConfigError> {
        for key in KEYS {
            if let Some(v) = env(&env_var_name(key)) {
                pairs.insert(key.to_owned(), v);
            }
        }
        let get = |k: &str| pairs.get(k).map(String::as_str).filter(|v| !v.is_empty());
        let need = |k: &str| get(k).ok_or_else(|| err(k, "is required"));
        let path = |k: &str| need(k).map(|v| base.join(v));
        let number = |k: &str, default: u64| -> Result<u64, ConfigError> {
            get(k).map_or(Ok(default), |v| v.parse().map_err(|e| err(k, format!("{v:?}: {e}"))))
        };

        let listen = get("listen")
            .unwrap_or("127.0.0.1:8080")
            .parse()
            .map_err(|e| err("listen", e))?;
        let transport = match get("transport").unwrap_or("none") {
            "none" => TransportKind::None,
            "loopback" => TransportKind::Loopback {
                scenario: path("loopback_scenario")?,
            },
            "at" => TransportKind::At { device: path("at_device")? },
            "http" => TransportKind::Http {
                base_url: need("http_base_url")?.to_owned(),
            },
            other => return Err(err("transport", format!("{other:?}: expected none, loopback, at or http"))),
        };
        let timezone = get("timezone")
            .unwrap_or("UTC")
            .parse()
            .map_err(|e| err("timezone", e))?;
        let response_timeout_secs = number("response_timeout_secs", 180)?;
        if response_timeout_secs == 0 {
            return Err(err("response_timeout_secs", "must be positive"));
        }
        Ok(Self {
            listen,
            token_file: path("token_file")?,
            store_path: path("store_path")?,
            transport,
            timezone,
            response_timeout_secs,
            poll_interval_ms: number("poll_interval_ms", 1000)?.max(10),
        })
    }
}
