use std::path::PathBuf;

use asafeplace_core::session::RunConfig;
use serde::{Deserialize, Serialize};

use crate::GatewayError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub host: String,
    /// 0 picks a free port.
    pub http_port: u16,
    pub records_dir: PathBuf,
    /// Replay files and asset pools are resolved under this directory.
    pub fixtures_dir: PathBuf,
    pub frame_rate_hz: f64,
    /// When set, every route except `/health` requires
    /// `Authorization: Bearer <token>` (or `?token=` on the frame stream).
    pub auth_token: Option<String>,
    /// Kernel send buffer per connection. Bounds how many frames can queue
    /// for a client that stops reading; `None` keeps the OS default.
    pub send_buffer_bytes: Option<usize>,
    pub run: RunConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            http_port: 8080,
            records_dir: "records".into(),
            fixtures_dir: "fixtures".into(),
            frame_rate_hz: 30.0,
            auth_token: None,
            send_buffer_bytes: Some(8 * 1024),
            run: RunConfig::default(),
        }
    }
}

impl ServiceConfig {
    /// Checks values and creates the directories if needed.
    pub fn prepare(&mut self) -> Result<(), GatewayError> {
        if !(self.frame_rate_hz.is_finite() && self.frame_rate_hz > 0.0) {
            return Err(GatewayError::Config(
                "frame_rate_hz must be positive".into(),
            ));
        }
        if self
            .auth_token
            .as_deref()
            .is_some_and(|t| t.trim().is_empty())
        {
            return Err(GatewayError::Config("auth token must not be blank".into()));
        }
        self.run.map.frame_rate_hz = self.frame_rate_hz;
        self.run
            .map
            .validate()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        for dir in [&self.records_dir, &self.fixtures_dir] {
            std::fs::create_dir_all(dir).map_err(|e| {
                GatewayError::Config(format!("cannot create {}: {e}", dir.display()))
            })?;
        }
        Ok(())
    }
}
