//! Single configuration document covering extraction, clustering, learning
//! and the session service. Missing fields take their defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::features::FeatureConfig;
use crate::mil::MilConfig;
use crate::model::ModelError;
use crate::shots::ClusteringConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct AppConfig {
    pub segment_len_sec: f64,
    pub features: FeatureConfig,
    pub clustering: ClusteringConfig,
    pub mil: MilConfig,
    pub serve: ServeConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            segment_len_sec: 10.0,
            features: FeatureConfig::default(),
            clustering: ClusteringConfig::default(),
            mil: MilConfig::default(),
            serve: ServeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct ServeConfig {
    pub host: String,
    pub port: u16,
    pub root: PathBuf,
    /// Labels required (with both classes present) before automatic retraining.
    pub min_labels: usize,
    /// Coder whose labels a session records when the request names none.
    pub default_coder: String,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            host: "127.0.0.1".into(),
            port: 8080,
            root: PathBuf::from("sessions"),
            min_labels: 6,
            default_coder: "coder1".into(),
        }
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn from_value(v: &serde_json::Value) -> Result<Self, ModelError> {
        if v.is_null() {
            return Ok(Self::default());
        }
        Ok(serde_json::from_value(v.clone())?)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.mil.seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_document_keeps_defaults() {
        let c: AppConfig = serde_json::from_str(r#"{"mil": {"lambda": 0.1}, "serve": {"minLabels": 4}}"#).unwrap();
        assert_eq!(c.mil.lambda, 0.1);
        assert_eq!(c.mil.max_outer_iterations, 20);
        assert_eq!(c.serve.min_labels, 4);
        assert_eq!(c.segment_len_sec, 10.0);
        assert_eq!(c.features, FeatureConfig::default());
    }

    #[test]
    fn round_trip() {
        let c = AppConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<AppConfig>(&s).unwrap(), c);
    }
}
