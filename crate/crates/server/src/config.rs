use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use tdprio_core::ingest::{TrackerConfig, TypeMap};

/// Server settings. A TOML file (named by `TDPRIO_CONFIG`) is read first;
/// environment variables override it.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default)]
    pub api_token: Option<String>,
    #[serde(default)]
    pub tracker: Option<TrackerConfig>,
    #[serde(default)]
    pub type_map: Option<TypeMap>,
}

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}

impl Default for Config {
    fn default() -> Self {
        Config { listen: default_listen(), data_dir: default_data_dir(), api_token: None, tracker: None, type_map: None }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

impl Config {
    pub const FILE_VAR: &'static str = "TDPRIO_CONFIG";
    pub const LISTEN_VAR: &'static str = "TDPRIO_LISTEN";
    pub const DATA_DIR_VAR: &'static str = "TDPRIO_DATA_DIR";
    pub const TOKEN_VAR: &'static str = "TDPRIO_API_TOKEN";

    pub fn from_file(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    /// Layers `get` (usually the process environment) over the optional file.
    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Config, ConfigError> {
        let mut cfg = match get(Self::FILE_VAR) {
            Some(path) => Config::from_file(Path::new(&path))?,
            None => Config::default(),
        };
        if let Some(listen) = get(Self::LISTEN_VAR) {
            cfg.listen = listen.parse().map_err(|e| ConfigError(format!("{}={listen}: {e}", Self::LISTEN_VAR)))?;
        }
        if let Some(dir) = get(Self::DATA_DIR_VAR) {
            cfg.data_dir = dir.into();
        }
        if let Some(token) = get(Self::TOKEN_VAR).filter(|t| !t.is_empty()) {
            cfg.api_token = Some(token);
        }
        if let Some(tracker) = TrackerConfig::from_lookup(&get) {
            cfg.tracker = Some(tracker);
        }
        Ok(cfg)
    }

    pub fn from_env() -> Result<Config, ConfigError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }
}
