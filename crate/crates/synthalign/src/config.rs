//! Pipeline and run configuration, loaded from TOML.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use synthalign_core::selection::same_scale;

use crate::gateway::{Backend, BackendEndpoint, Gateway, HttpBackend, RetryPolicy, MAX_RETRIES_LIMIT};
use crate::mock::{MockBackend, MockConfig};
use crate::protocol::Role;

pub const DEFAULT_RESPONDERS: [&str; 5] = [
    "llava-1.6-mistral",
    "llava-1.6-vicuna-13b",
    "llava-1.6-llama-8b",
    "internvl2.5-8b",
    "mini-internvl-4b",
];

pub const DEFAULT_TOPICS: [&str; 10] = [
    "art",
    "school",
    "transport",
    "weather",
    "daily_activities",
    "industrial",
    "nature",
    "food",
    "sports",
    "animals",
];

pub const DEFAULT_GUIDANCE_SCALES: [f64; 4] = [5.0, 7.0, 9.0, 11.0];

/// URL that binds a role to the in-process mock backend.
pub const MOCK_URL: &str = "mock:";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("no backend URL for role {role} (set backends.{role}.url or {var})", var = role.env_var())]
    MissingBackend { role: Role },
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub guidance_scales: Vec<f64>,
    pub responder_ids: Vec<String>,
    pub global_seed: u64,
    /// Concurrent requests per backend role.
    pub max_inflight: usize,
    /// Prompts processed concurrently.
    pub max_concurrent_prompts: usize,
    pub topics: Vec<String>,
    pub image_width: u32,
    pub image_height: u32,
    /// Fewest successful responses a pair may be built from.
    pub min_responses: usize,
    /// Send the selected image along with the prompt when writing the
    /// instruction.
    pub instruction_uses_image: bool,
    /// Send the image to the response scorer.
    pub scorer_sees_image: bool,
    pub pipeline_version: String,
    /// Timestamp stamped on every record. Fixed by default so datasets are
    /// reproducible byte for byte.
    pub created_at: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            guidance_scales: DEFAULT_GUIDANCE_SCALES.to_vec(),
            responder_ids: DEFAULT_RESPONDERS.iter().map(|s| s.to_string()).collect(),
            global_seed: 42,
            max_inflight: 4,
            max_concurrent_prompts: 8,
            topics: DEFAULT_TOPICS.iter().map(|s| s.to_string()).collect(),
            image_width: 64,
            image_height: 64,
            min_responses: 2,
            instruction_uses_image: true,
            scorer_sees_image: false,
            pipeline_version: concat!("synthalign-", env!("CARGO_PKG_VERSION")).to_string(),
            created_at: "1970-01-01T00:00:00Z".to_string(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.guidance_scales;
        if g.len() < 2 {
            return Err(invalid(format!("need at least 2 guidance scales, got {}", g.len())));
        }
        if let Some(bad) = g.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(invalid(format!("guidance scale {bad} must be positive")));
        }
        for (i, a) in g.iter().enumerate() {
            if g[i + 1..].iter().any(|b| same_scale(*a, *b)) {
                return Err(invalid(format!("guidance scale {a} listed twice")));
            }
        }
        let k = self.responder_ids.len();
        if k < 2 {
            return Err(invalid(format!("need at least 2 responders, got {k}")));
        }
        for (i, id) in self.responder_ids.iter().enumerate() {
            if id.is_empty() || id.contains([']', '\n']) {
                return Err(invalid(format!("responder id {id:?} is not allowed")));
            }
            if self.responder_ids[..i].contains(id) {
                return Err(invalid(format!("responder {id} listed twice")));
            }
        }
        if !(2..=k).contains(&self.min_responses) {
            return Err(invalid(format!("min_responses must be in 2..={k}")));
        }
        if self.topics.is_empty() {
            return Err(invalid("topic list is empty"));
        }
        for (i, t) in self.topics.iter().enumerate() {
            if t.is_empty() || self.topics[..i].contains(t) {
                return Err(invalid(format!("topic {t:?} is empty or duplicated")));
            }
        }
        if self.max_inflight == 0 || self.max_concurrent_prompts == 0 {
            return Err(invalid("max_inflight and max_concurrent_prompts must be at least 1"));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(invalid("image dimensions must be positive"));
        }
        if self.pipeline_version.is_empty() {
            return Err(invalid("pipeline_version is empty"));
        }
        Ok(())
    }
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_retries() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Overrides `pipeline.max_inflight` for this role.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_inflight: Option<usize>,
}

impl BackendConfig {
    pub fn with_url(url: impl Into<String>) -> Self {
        Self {
            url: Some(url.into()),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            max_inflight: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetryConfig {
    pub base_ms: u64,
    pub factor: f64,
    pub jitter: f64,
    pub cap_ms: u64,
}

impl Default for RetryConfig {
    fn default() -> Self {
        Self {
            base_ms: 250,
            factor: 2.0,
            jitter: 0.2,
            cap_ms: 5_000,
        }
    }
}

impl RetryConfig {
    pub fn policy(&self) -> RetryPolicy {
        RetryPolicy {
            base: Duration::from_millis(self.base_ms),
            factor: self.factor,
            jitter: self.jitter,
            cap: Duration::from_millis(self.cap_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run_id: String,
    pub out_dir: PathBuf,
    pub log_level: String,
    pub pipeline: PipelineConfig,
    /// Keyed by role name.
    pub backends: BTreeMap<String, BackendConfig>,
    pub retry: RetryConfig,
    pub mock: MockConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_id: "run".to_string(),
            out_dir: PathBuf::from("out"),
            log_level: "info".to_string(),
            pipeline: PipelineConfig::default(),
            backends: BTreeMap::new(),
            retry: RetryConfig::default(),
            mock: MockConfig::default(),
        }
    }
}

impl RunConfig {
    /// Every role bound to the in-process mock.
    pub fn mock() -> Self {
        Self {
            backends: Role::ALL
                .iter()
                .map(|r| (r.as_str().to_string(), BackendConfig::with_url(MOCK_URL)))
                .collect(),
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) || self.run_id.starts_with('.') {
            return Err(invalid(format!("run_id {:?} is not a plain file name", self.run_id)));
        }
        for (name, b) in &self.backends {
            let role: Role = name.parse().map_err(ConfigError::Invalid)?;
            if b.timeout_ms == 0 {
                return Err(invalid(format!("backends.{role}.timeout_ms must be positive")));
            }
            if b.max_retries > MAX_RETRIES_LIMIT {
                return Err(invalid(format!("backends.{role}.max_retries exceeds {MAX_RETRIES_LIMIT}")));
            }
            if b.max_inflight == Some(0) {
                return Err(invalid(format!("backends.{role}.max_inflight must be at least 1")));
            }
        }
        let r = &self.retry;
        if !(r.factor.is_finite() && r.factor >= 1.0) || !(0.0..1.0).contains(&r.jitter) {
            return Err(invalid("retry.factor must be >= 1 and retry.jitter in [0, 1)"));
        }
        if !(self.mock.response_noise.is_finite() && self.mock.response_noise >= 0.0) {
            return Err(invalid("mock.response_noise must be non-negative"));
        }
        self.pipeline.validate()
    }

    /// URL for `role`: the environment override first, then the file.
    pub fn backend_url(&self, role: Role, env: &dyn Fn(&str) -> Option<String>) -> Option<String> {
        env(&role.env_var())
            .filter(|u| !u.is_empty())
            .or_else(|| self.backends.get(role.as_str()).and_then(|b| b.url.clone()))
    }

    /// Checks every role has a URL before anything is built.
    pub fn check_backends(&self, env: &dyn Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        for role in Role::ALL {
            if self.backend_url(role, env).is_none() {
                return Err(ConfigError::MissingBackend { role });
            }
        }
        Ok(())
    }

    /// Builds the gateway. The in-process mock is created only when some role
    /// uses [`MOCK_URL`], and is returned so callers can inspect it.
    pub fn build_gateway(
        &self,
        env: &dyn Fn(&str) -> Option<String>,
    ) -> Result<(Gateway, Option<Arc<MockBackend>>), ConfigError> {
        self.check_backends(env)?;
        let mut mock: Option<Arc<MockBackend>> = None;
        let mut builder = Gateway::builder().retry_policy(self.retry.policy());
        for role in Role::ALL {
            let url = self.backend_url(role, env).expect("checked above");
            let file = self.backends.get(role.as_str());
            let timeout = Duration::from_millis(file.map_or(default_timeout_ms(), |b| b.timeout_ms));
            let retries = file.map_or(default_max_retries(), |b| b.max_retries);
            let inflight = file.and_then(|b| b.max_inflight).unwrap_or(self.pipeline.max_inflight);
            let backend: Arc<dyn Backend> = if url == MOCK_URL {
                mock.get_or_insert_with(|| Arc::new(MockBackend::new(self.mock.clone(), self.pipeline.global_seed)))
                    .clone()
            } else if url.starts_with("http://") || url.starts_with("https://") {
                Arc::new(HttpBackend::new(url.clone()))
            } else {
                return Err(invalid(format!("{role}: unsupported backend URL {url:?}")));
            };
            let ep = BackendEndpoint::new(role, url, timeout, retries).map_err(|e| invalid(e.to_string()))?;
            builder = builder.bind(ep, backend, inflight);
        }
        Ok((builder.build(), mock))
    }
}

/// Environment lookup for [`RunConfig::backend_url`].
pub fn process_env(name: &str) -> Option<String> {
    std::env::var(name).ok()
}
