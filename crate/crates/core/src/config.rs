//! Engine configuration and JSON overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chat::EndpointConfig;
use crate::pipeline::{DEFAULT_ALPHA, DEFAULT_THRESHOLD};
use crate::planner::DEFAULT_WINDOW;
use crate::twin::TrackingParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Chat provider settings. Unset fields fall back to the environment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSettings {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Ask the chat model for semantic selection instead of keyword matching.
    pub chat_semantic: bool,
}

impl ProviderSettings {
    /// Explicit endpoint, else the environment's.
    pub fn endpoint_config(&self) -> Option<EndpointConfig> {
        let env = EndpointConfig::from_env();
        match &self.endpoint {
            Some(url) => Some(EndpointConfig {
                url: url.clone(),
                model: self
                    .model
                    .clone()
                    .or_else(|| env.as_ref().map(|e| e.model.clone()))
                    .unwrap_or_else(|| EndpointConfig::DEFAULT_MODEL.into()),
                api_key: env.and_then(|e| e.api_key),
            }),
            None => env.map(|mut e| {
                if let Some(m) = &self.model {
                    e.model = m.clone();
                }
                e
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Minimum sliding window, in frames.
    pub window: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub tau_match: f64,
    pub threshold: f64,
    pub model_selection: bool,
    pub dt_update: bool,
    pub temporal_integration: bool,
    pub provider: ProviderSettings,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let tracking = TrackingParams::default();
        EngineConfig {
            window: DEFAULT_WINDOW,
            lambda: tracking.lambda,
            alpha: DEFAULT_ALPHA,
            tau_match: tracking.tau_match,
            threshold: DEFAULT_THRESHOLD,
            model_selection: true,
            dt_update: true,
            temporal_integration: true,
            provider: ProviderSettings::default(),
        }
    }
}

impl EngineConfig {
    /// Defaults overridden by the fields present in a JSON file.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: EngineConfig = serde_json::from_str(&text).map_err(|source| ConfigError::Json {
            path: path.display().to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn tracking(&self) -> TrackingParams {
        TrackingParams {
            lambda: self.lambda,
            tau_match: self.tau_match,
        }
    }

    /// Smoothing strength actually applied: 1 when temporal integration is off.
    pub fn effective_alpha(&self) -> f64 {
        if self.temporal_integration {
            self.alpha
        } else {
            1.0
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be finite and non-negative, got {}", self.lambda));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must be in (0, 1], got {}", self.alpha));
        }
        if !(self.tau_match > 0.0 && self.tau_match < 1.0) {
            return bad(format!("tau_match must be in (0, 1), got {}", self.tau_match));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must be in (0, 1), got {}", self.threshold));
        }
        Ok(())
    }
}
