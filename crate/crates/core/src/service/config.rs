use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::patterns::RuleSet;
use crate::pipeline::Detector;
use crate::scoring::ScorerKind;
use crate::selection::{GateConfig, ThresholdConfig, ThresholdTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    /// Rules file; the bundled rules when absent.
    pub rules: Option<PathBuf>,
    /// Trained scorer; the rule scorer when absent.
    pub model: Option<PathBuf>,
    pub gate: GateConfig,
    pub thresholds: ThresholdConfig,
    /// `host:port` to accept connections on; stdin/stdout when absent.
    pub listen: Option<String>,
    pub max_sessions: usize,
    /// Per-utterance processing budget; overruns are logged and counted.
    pub deadline_ms: u64,
    /// Sessions without events for this long are closed.
    pub idle_timeout_s: f64,
    /// Worker threads; 0 picks the number of available cores.
    pub workers: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            rules: None,
            model: None,
            gate: GateConfig::default(),
            thresholds: ThresholdConfig::default(),
            listen: None,
            max_sessions: 10_000,
            deadline_ms: 3_000,
            idle_timeout_s: 600.0,
            workers: 0,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ServiceConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        ServiceConfig::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.deadline_ms == 0 {
            return Err(Error::Config("deadline_ms must be positive".into()));
        }
        if self.max_sessions == 0 {
            return Err(Error::Config("max_sessions must be positive".into()));
        }
        if !(self.idle_timeout_s.is_finite() && self.idle_timeout_s > 0.0) {
            return Err(Error::Config("idle_timeout_s must be positive".into()));
        }
        self.gate.validate()?;
        ThresholdTable::<f64>::from_config(&self.thresholds)?;
        Ok(())
    }

    pub fn deadline(&self) -> Duration {
        Duration::from_millis(self.deadline_ms)
    }

    pub fn idle_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.idle_timeout_s)
    }

    pub fn worker_count(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }

    /// Loads rules and model; fails on unreadable or invalid files.
    pub fn build_detector<T: Scalar>(&self) -> Result<Detector<T>> {
        self.validate()?;
        let rules = match &self.rules {
            Some(path) => RuleSet::load(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            None => RuleSet::default_rules(),
        };
        let scorer = match &self.model {
            Some(path) => {
                ScorerKind::load_trained(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => ScorerKind::rules(),
        };
        let mut detector = Detector::new(rules, scorer);
        detector.gate = self.gate;
        detector.thresholds = ThresholdTable::from_config(&self.thresholds)?;
        Ok(detector)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = ServiceConfig::from_toml_str("").unwrap();
        assert_eq!(c, ServiceConfig::default());
        let c = ServiceConfig::from_toml_str(
            "deadline_ms = 500\n[gate]\nmax_utterance_index = 20\n[thresholds]\ndefault = 0.7\n",
        )
        .unwrap();
        assert_eq!(c.deadline_ms, 500);
        assert_eq!(c.gate.max_utterance_index, 20);
        assert_eq!(c.gate.min_tokens, 4);
        let d = c.build_detector::<f64>().unwrap();
        assert_eq!(d.thresholds.default_threshold(), 0.7);
    }

    #[test]
    fn invalid_configs_fail_fast() {
        assert!(ServiceConfig::from_toml_str("deadline_ms = 0").is_err());
        assert!(ServiceConfig::from_toml_str("bogus = 1").is_err());
        let c = ServiceConfig { model: Some("/nonexistent/model.bin".into()), ..ServiceConfig::default() };
        assert!(c.build_detector::<f64>().is_err());
    }
}
