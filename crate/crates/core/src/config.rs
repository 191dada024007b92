//! Campaign configuration: a TOML file, then command-line overrides.
//!
//! ```toml
//! [target]
//! base_url = "http://127.0.0.1:8080"
//! timeout_ms = 2000
//! auth_header_name = "Authorization"
//! auth_header_value = "Bearer t0ken"
//!
//! [checker]
//! mode = "strict"            # or "server-error"
//!
//! [coverage]
//! agent_url = "http://127.0.0.1:8081"
//! fetch_timeout_ms = 2000
//!
//! [scheduler]
//! kind = "fast"
//! max_energy = 64
//!
//! [campaign]
//! budget_secs = 60
//! seed = 1
//! corpus_dir = "corpus"
//! report_dir = "report"
//! clock = "wall"             # or "virtual"
//! virtual_request_ms = 1
//! max_execs = 100000
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::harness::{CheckerMode, TargetConfig};
use crate::scheduler::{Schedule, MAX_ENERGY};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// How campaign time is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    Wall,
    /// Every request costs a fixed number of milliseconds and latencies are
    /// reported as that cost, which makes campaigns replayable.
    Virtual {
        request_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    /// Defaults to the spec's first server URL when unset.
    pub base_url: Option<String>,
    pub timeout_ms: u64,
    pub auth_header: Option<(String, String)>,
    pub checker: CheckerMode,
    pub agent_url: Option<String>,
    pub fetch_timeout_ms: u64,
    pub schedule: Schedule,
    pub max_energy: u32,
    pub time_budget_secs: f64,
    /// 0 means derive one from the clock.
    pub rng_seed: u64,
    pub corpus_dir: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    pub clock: Clock,
    pub max_execs: Option<u64>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            base_url: None,
            timeout_ms: 2000,
            auth_header: None,
            checker: CheckerMode::Strict,
            agent_url: None,
            fetch_timeout_ms: 2000,
            schedule: Schedule::Fast,
            max_energy: MAX_ENERGY,
            time_budget_secs: 60.0,
            rng_seed: 0,
            corpus_dir: None,
            report_dir: None,
            clock: Clock::Wall,
            max_execs: None,
        }
    }
}

impl CampaignConfig {
    pub fn target(&self, spec_base_url: &str) -> TargetConfig {
        TargetConfig {
            base_url: self
                .base_url
                .clone()
                .unwrap_or_else(|| spec_base_url.to_string()),
            timeout_ms: self.timeout_ms,
            auth_header: self.auth_header.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.time_budget_secs <= 0.0 || !self.time_budget_secs.is_finite() {
            return Err(ConfigError::Invalid(format!(
                "time budget must be positive, got {}",
                self.time_budget_secs
            )));
        }
        if self.timeout_ms == 0 {
            return Err(ConfigError::Invalid(
                "target.timeout_ms must be positive".into(),
            ));
        }
        if !(1..=MAX_ENERGY).contains(&self.max_energy) {
            return Err(ConfigError::Invalid(format!(
                "scheduler.max_energy must be in 1..={MAX_ENERGY}"
            )));
        }
        if let Clock::Virtual { request_ms: 0 } = self.clock {
            return Err(ConfigError::Invalid(
                "campaign.virtual_request_ms must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let file: FileConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        file.into_config()
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    /// Applies command-line values over file values.
    pub fn apply(&mut self, o: &Overrides) -> Result<(), ConfigError> {
        if let Some(seed) = o.seed {
            self.rng_seed = seed;
        }
        if let Some(b) = o.budget_secs {
            self.time_budget_secs = b;
        }
        if let Some(d) = &o.corpus_dir {
            self.corpus_dir = Some(d.clone());
        }
        if let Some(d) = &o.report_dir {
            self.report_dir = Some(d.clone());
        }
        if let Some(s) = &o.schedule {
            self.schedule = s.parse().map_err(|e: crate::scheduler::SchedulerError| {
                ConfigError::Invalid(e.to_string())
            })?;
        }
        if let Some(a) = &o.agent_url {
            self.agent_url = Some(a.clone());
        }
        if let Some(c) = &o.checker {
            self.checker = c.parse().map_err(ConfigError::Invalid)?;
        }
        Ok(())
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub budget_secs: Option<f64>,
    pub corpus_dir: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    pub schedule: Option<String>,
    pub agent_url: Option<String>,
    pub checker: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    target: TargetSection,
    #[serde(default)]
    checker: CheckerSection,
    #[serde(default)]
    coverage: CoverageSection,
    #[serde(default)]
    scheduler: SchedulerSection,
    #[serde(default)]
    campaign: CampaignSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetSection {
    base_url: Option<String>,
    timeout_ms: Option<u64>,
    auth_header_name: Option<String>,
    auth_header_value: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckerSection {
    mode: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoverageSection {
    agent_url: Option<String>,
    fetch_timeout_ms: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchedulerSection {
    kind: Option<String>,
    max_energy: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CampaignSection {
    budget_secs: Option<f64>,
    seed: Option<u64>,
    corpus_dir: Option<PathBuf>,
    report_dir: Option<PathBuf>,
    clock: Option<String>,
    virtual_request_ms: Option<u64>,
    max_execs: Option<u64>,
}

impl FileConfig {
    fn into_config(self) -> Result<CampaignConfig, ConfigError> {
        let d = CampaignConfig::default();
        let auth_header = match (self.target.auth_header_name, self.target.auth_header_value) {
            (Some(n), Some(v)) => Some((n, v)),
            (None, None) => None,
            _ => {
                return Err(ConfigError::Invalid(
                    "target.auth_header_name and target.auth_header_value go together".into(),
                ))
            }
        };
        let checker = match self.checker.mode {
            Some(m) => m.parse().map_err(ConfigError::Invalid)?,
            None => d.checker,
        };
        let schedule = match self.scheduler.kind {
            Some(k) => k.parse().map_err(|e: crate::scheduler::SchedulerError| {
                ConfigError::Invalid(e.to_string())
            })?,
            None => d.schedule,
        };
        let clock = match self.campaign.clock.as_deref() {
            None | Some("wall") => Clock::Wall,
            Some("virtual") => Clock::Virtual {
                request_ms: self.campaign.virtual_request_ms.unwrap_or(1),
            },
            Some(other) => {
                return Err(ConfigError::Invalid(format!(
                    "campaign.clock must be `wall` or `virtual`, got `{other}`"
                )))
            }
        };
        Ok(CampaignConfig {
            base_url: self.target.base_url,
            timeout_ms: self.target.timeout_ms.unwrap_or(d.timeout_ms),
            auth_header,
            checker,
            agent_url: self.coverage.agent_url,
            fetch_timeout_ms: self.coverage.fetch_timeout_ms.unwrap_or(d.fetch_timeout_ms),
            schedule,
            max_energy: self.scheduler.max_energy.unwrap_or(d.max_energy),
            time_budget_secs: self.campaign.budget_secs.unwrap_or(d.time_budget_secs),
            rng_seed: self.campaign.seed.unwrap_or(d.rng_seed),
            corpus_dir: self.campaign.corpus_dir,
            report_dir: self.campaign.report_dir,
            clock,
            max_execs: self.campaign.max_execs,
        })
    }
}
