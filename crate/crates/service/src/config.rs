use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use luminocity::{GeoKeyFormat, GridSpec};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const MIN_FRAME_PERIOD_MS: u64 = 10;

/// Server settings; the JSON config file mirrors this struct field for field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    pub grid: GridSpec,
    pub key_format: GeoKeyFormat,
    pub frame_period_ms: u64,
    /// Newline-delimited feed file followed like `tail -f`.
    pub feed: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: PathBuf::from("data"),
            grid: GridSpec::mit_campus(),
            key_format: GeoKeyFormat::default(),
            frame_period_ms: 100,
            feed: None,
        }
    }
}

impl ServerConfig {
    pub fn validate(&self) -> Result<(), ServiceError> {
        let invalid = |msg: String| ServiceError::InvalidConfig(msg);
        if self.frame_period_ms < MIN_FRAME_PERIOD_MS {
            return Err(invalid(format!(
                "frame_period_ms {} is below the {MIN_FRAME_PERIOD_MS} ms minimum",
                self.frame_period_ms
            )));
        }
        self.grid.validate().map_err(|e| invalid(e.to_string()))?;
        self.key_format.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ServiceError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ServiceError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
