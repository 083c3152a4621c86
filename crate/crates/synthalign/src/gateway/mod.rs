//! Typed client surface over the five backend roles.
//!
//! A [`Gateway`] binds each [`Role`] to a [`Backend`] transport (HTTP or the
//! in-process mock), enforces a per-role in-flight limit, applies timeouts and
//! retries transient failures with capped exponential backoff.

mod http;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use base64::Engine;
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use synthalign_core::seeding::content_digest;
use synthalign_core::selection::ImageCandidate;
use tokio::sync::Semaphore;

use crate::protocol::*;

pub use http::HttpBackend;

pub const MAX_RETRIES_LIMIT: u32 = 5;

/// Transport-level failure of a single attempt.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("HTTP {status}{}", envelope.as_ref().map(|e| format!(" ({e})")).unwrap_or_default())]
    Status {
        status: u16,
        envelope: Option<ErrorEnvelope>,
    },
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Status { status, .. } => *status >= 500,
            BackendError::Timeout | BackendError::Transport(_) => true,
        }
    }

    pub fn from_status(status: u16, body: &[u8]) -> Self {
        BackendError::Status {
            status,
            envelope: serde_json::from_slice(body).ok(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("no backend bound for role {0}")]
    Unbound(Role),
    #[error("{role}: request rejected before send: {reason}")]
    Precondition { role: Role, reason: String },
    #[error("{role}: backend unavailable after {attempts} attempts: {last}")]
    Unavailable {
        role: Role,
        attempts: u32,
        last: BackendError,
    },
    #[error("{role}: request rejected by backend: {error}")]
    Rejected { role: Role, error: BackendError },
    #[error("{role}: protocol error: {reason}")]
    Protocol { role: Role, reason: String },
}

#[derive(Debug, thiserror::Error)]
#[error("invalid endpoint: {0}")]
pub struct EndpointError(String);

/// Where and how to reach one role's backend.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendEndpoint {
    role: Role,
    base_url: String,
    timeout: Duration,
    max_retries: u32,
}

impl BackendEndpoint {
    pub fn new(role: Role, base_url: impl Into<String>, timeout: Duration, max_retries: u32) -> Result<Self, EndpointError> {
        if timeout.is_zero() {
            return Err(EndpointError(format!("{role}: timeout must be positive")));
        }
        if max_retries > MAX_RETRIES_LIMIT {
            return Err(EndpointError(format!(
                "{role}: max_retries {max_retries} exceeds {MAX_RETRIES_LIMIT}"
            )));
        }
        Ok(Self {
            role,
            base_url: base_url.into(),
            timeout,
            max_retries,
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn max_retries(&self) -> u32 {
        self.max_retries
    }
}

/// Exponential backoff: `base · factor^n`, scaled by a uniform jitter in
/// `[1 − jitter, 1 + jitter]` and capped at `cap`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub base: Duration,
    pub factor: f64,
    pub jitter: f64,
    pub cap: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base: Duration::from_millis(250),
            factor: 2.0,
            jitter: 0.2,
            cap: Duration::from_secs(5),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based); `unit` in `[-1, 1]`
    /// selects the jitter.
    pub fn delay(&self, retry: u32, unit: f64) -> Duration {
        let unit = unit.clamp(-1.0, 1.0);
        let raw = self.base.as_secs_f64() * self.factor.powi(retry as i32) * (1.0 + self.jitter * unit);
        Duration::from_secs_f64(raw.max(0.0).min(self.cap.as_secs_f64()))
    }

    /// Upper bound on the total time spent sleeping across `max_retries`
    /// retries.
    pub fn max_total_wait(&self, max_retries: u32) -> Duration {
        (0..max_retries).map(|n| self.delay(n, 1.0)).sum()
    }
}

/// One transport able to carry protocol requests for any role.
#[async_trait]
pub trait Backend: Send + Sync {
    /// Sends a serialized request body to `role`'s route and returns the raw
    /// 2xx reply body.
    async fn call(&self, role: Role, body: Vec<u8>) -> Result<Vec<u8>, BackendError>;
}

/// Counters observed through the gateway.
#[derive(Debug, Default)]
pub struct GatewayStats {
    attempts: [AtomicU64; 5],
    retries: [AtomicU64; 5],
}

impl GatewayStats {
    /// Attempts sent to `role`, retries included.
    pub fn attempts(&self, role: Role) -> u64 {
        self.attempts[role.index()].load(Ordering::Relaxed)
    }

    pub fn retries(&self, role: Role) -> u64 {
        self.retries[role.index()].load(Ordering::Relaxed)
    }

    pub fn total_attempts(&self) -> u64 {
        Role::ALL.iter().map(|&r| self.attempts(r)).sum()
    }
}

struct Binding {
    endpoint: BackendEndpoint,
    backend: Arc<dyn Backend>,
    permits: Arc<Semaphore>,
}

/// Image bytes plus the reference the protocol uses for them.
#[derive(Debug, Clone)]
pub struct ImageBlob {
    pub image_ref: String,
    pub data: Option<Arc<Vec<u8>>>,
    pub path: Option<PathBuf>,
}

impl ImageBlob {
    pub fn inline(bytes: Vec<u8>) -> Self {
        Self {
            image_ref: content_digest(&bytes),
            data: Some(Arc::new(bytes)),
            path: None,
        }
    }

    /// `(image_data, image_path)` wire fields: inline at or below
    /// [`INLINE_IMAGE_LIMIT`], otherwise by path.
    fn wire_fields(&self, role: Role) -> Result<(Option<String>, Option<String>), GatewayError> {
        if self.image_ref.is_empty() {
            return Err(GatewayError::Protocol {
                role,
                reason: "missing image_ref".into(),
            });
        }
        match (&self.data, &self.path) {
            (Some(d), _) if d.len() <= INLINE_IMAGE_LIMIT => {
                Ok((Some(base64::engine::general_purpose::STANDARD.encode(d.as_slice())), None))
            }
            (_, Some(p)) => Ok((None, Some(p.to_string_lossy().into_owned()))),
            _ => Err(GatewayError::Precondition {
                role,
                reason: format!("image {} is over the inline limit and has no path", self.image_ref),
            }),
        }
    }
}

/// A freshly generated, still unscored image.
#[derive(Debug, Clone)]
pub struct GeneratedImage {
    pub candidate: ImageCandidate,
    pub blob: ImageBlob,
}

pub struct GatewayBuilder {
    bindings: BTreeMap<Role, Binding>,
    retry: RetryPolicy,
}

impl GatewayBuilder {
    pub fn retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Binds `endpoint.role()` to `backend` with at most `max_inflight`
    /// concurrent requests.
    pub fn bind(mut self, endpoint: BackendEndpoint, backend: Arc<dyn Backend>, max_inflight: usize) -> Self {
        let role = endpoint.role();
        self.bindings.insert(
            role,
            Binding {
                endpoint,
                backend,
                permits: Arc::new(Semaphore::new(max_inflight.max(1))),
            },
        );
        self
    }

    pub fn build(self) -> Gateway {
        Gateway {
            bindings: self.bindings,
            retry: self.retry,
            stats: Arc::new(GatewayStats::default()),
        }
    }
}

pub struct Gateway {
    bindings: BTreeMap<Role, Binding>,
    retry: RetryPolicy,
    stats: Arc<GatewayStats>,
}

impl Gateway {
    pub fn builder() -> GatewayBuilder {
        GatewayBuilder {
            bindings: BTreeMap::new(),
            retry: RetryPolicy::default(),
        }
    }

    /// Same transport and limits for every role.
    pub fn uniform(backend: Arc<dyn Backend>, timeout: Duration, max_retries: u32, max_inflight: usize) -> Result<Self, EndpointError> {
        let mut b = Self::builder();
        for role in Role::ALL {
            let ep = BackendEndpoint::new(role, "in-process", timeout, max_retries)?;
            b = b.bind(ep, backend.clone(), max_inflight);
        }
        Ok(b.build())
    }

    pub fn stats(&self) -> &GatewayStats {
        &self.stats
    }

    pub fn endpoint(&self, role: Role) -> Option<&BackendEndpoint> {
        self.bindings.get(&role).map(|b| &b.endpoint)
    }

    async fn invoke<Req: Serialize, Rep: DeserializeOwned>(&self, role: Role, req: &Req) -> Result<Rep, GatewayError> {
        let binding = self.bindings.get(&role).ok_or(GatewayError::Unbound(role))?;
        let body = serde_json::to_vec(req).map_err(|e| GatewayError::Precondition {
            role,
            reason: e.to_string(),
        })?;
        let max_retries = binding.endpoint.max_retries;
        let mut attempt = 0u32;
        loop {
            let outcome = {
                let _permit = binding.permits.acquire().await.expect("semaphore never closed");
                self.stats.attempts[role.index()].fetch_add(1, Ordering::Relaxed);
                match tokio::time::timeout(binding.endpoint.timeout, binding.backend.call(role, body.clone())).await {
                    Ok(r) => r,
                    Err(_) => Err(BackendError::Timeout),
                }
            };
            match outcome {
                Ok(bytes) => {
                    return serde_json::from_slice(&bytes).map_err(|e| GatewayError::Protocol {
                        role,
                        reason: format!("malformed reply: {e}"),
                    })
                }
                Err(e) if e.is_retryable() && attempt < max_retries => {
                    let delay = self.retry.delay(attempt, rand::rng().random_range(-1.0..=1.0));
                    attempt += 1;
                    self.stats.retries[role.index()].fetch_add(1, Ordering::Relaxed);
                    tracing::warn!(%role, retry = attempt, ?delay, error = %e, "retrying backend call");
                    tokio::time::sleep(delay).await;
                }
                Err(e) if e.is_retryable() => {
                    return Err(GatewayError::Unavailable {
                        role,
                        attempts: attempt + 1,
                        last: e,
                    })
                }
                Err(e) => return Err(GatewayError::Rejected { role, error: e }),
            }
        }
    }

    pub async fn generate_image(&self, prompt_id: &str, req: &GenerateImageRequest) -> Result<GeneratedImage, GatewayError> {
        let role = Role::ImageGen;
        let pre = |reason: String| GatewayError::Precondition { role, reason };
        if req.prompt.trim().is_empty() {
            return Err(pre("prompt is empty".into()));
        }
        if !(req.guidance_scale.is_finite() && req.guidance_scale > 0.0) {
            return Err(pre(format!("guidance_scale must be > 0, got {}", req.guidance_scale)));
        }
        if req.width == 0 || req.height == 0 {
            return Err(pre("image dimensions must be positive".into()));
        }
        let reply: GenerateImageReply = self.invoke(role, req).await?;
        let protocol = |reason: String| GatewayError::Protocol { role, reason };
        if reply.seed != req.seed || reply.guidance_scale.to_bits() != req.guidance_scale.to_bits() {
            return Err(protocol("reply does not echo the requested seed and guidance scale".into()));
        }
        let blob = match (reply.image_data, reply.image_path) {
            (Some(data), _) => {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(data)
                    .map_err(|e| protocol(format!("image_data is not base64: {e}")))?;
                ImageBlob {
                    image_ref: content_digest(&bytes),
                    data: Some(Arc::new(bytes)),
                    path: None,
                }
            }
            (None, Some(path)) => {
                let bytes = std::fs::read(&path).map_err(|e| protocol(format!("cannot read image_path {path}: {e}")))?;
                ImageBlob {
                    image_ref: content_digest(&bytes),
                    data: Some(Arc::new(bytes)),
                    path: Some(path.into()),
                }
            }
            (None, None) => return Err(protocol("reply carries neither image_data nor image_path".into())),
        };
        if blob.image_ref != reply.image_ref {
            return Err(protocol(format!(
                "image_ref {} does not match content digest {}",
                reply.image_ref, blob.image_ref
            )));
        }
        Ok(GeneratedImage {
            candidate: ImageCandidate {
                prompt_id: prompt_id.to_string(),
                guidance_scale: req.guidance_scale,
                image_ref: blob.image_ref.clone(),
                seed: req.seed,
                score: None,
            },
            blob,
        })
    }

    pub async fn score_image(&self, prompt: &str, image: &ImageBlob) -> Result<f64, GatewayError> {
        let role = Role::ImageScore;
        let (image_data, image_path) = image.wire_fields(role)?;
        let req = ScoreImageRequest {
            prompt: prompt.to_string(),
            image_ref: image.image_ref.clone(),
            image_data,
            image_path,
        };
        let reply: ScoreImageReply = self.invoke(role, &req).await?;
        if !reply.scalar.is_finite() {
            return Err(GatewayError::Protocol {
                role,
                reason: "non-finite image score".into(),
            });
        }
        Ok(reply.scalar)
    }

    pub async fn make_instruction(&self, t2i_prompt: &str, image: Option<&ImageBlob>) -> Result<String, GatewayError> {
        let role = Role::Instruct;
        if t2i_prompt.trim().is_empty() {
            return Err(GatewayError::Precondition {
                role,
                reason: "prompt is empty".into(),
            });
        }
        let (image_ref, image_data, image_path) = match image {
            Some(img) => {
                let (d, p) = img.wire_fields(role)?;
                (Some(img.image_ref.clone()), d, p)
            }
            None => (None, None, None),
        };
        let reply: InstructionReply = self
            .invoke(
                role,
                &InstructionRequest {
                    prompt: t2i_prompt.to_string(),
                    image_ref,
                    image_data,
                    image_path,
                },
            )
            .await?;
        if reply.instruction.trim().is_empty() {
            return Err(GatewayError::Protocol {
                role,
                reason: "empty instruction".into(),
            });
        }
        Ok(reply.instruction)
    }

    pub async fn generate_response(&self, instruction: &str, image: &ImageBlob, responder_id: &str) -> Result<String, GatewayError> {
        let role = Role::Respond;
        let (image_data, image_path) = image.wire_fields(role)?;
        let req = GenerateResponseRequest {
            instruction: instruction.to_string(),
            responder_id: responder_id.to_string(),
            image_ref: image.image_ref.clone(),
            image_data,
            image_path,
        };
        let reply: GenerateResponseReply = self.invoke(role, &req).await?;
        if reply.responder_id != responder_id {
            return Err(GatewayError::Protocol {
                role,
                reason: format!("reply for responder {} instead of {responder_id}", reply.responder_id),
            });
        }
        if reply.response.trim().is_empty() {
            return Err(GatewayError::Protocol {
                role,
                reason: "empty response".into(),
            });
        }
        Ok(reply.response)
    }

    pub async fn score_response(
        &self,
        instruction: &str,
        response: &str,
        image: Option<&ImageBlob>,
    ) -> Result<ScoreResponsePayload, GatewayError> {
        let role = Role::ResponseScore;
        let (image_ref, image_data, image_path) = match image {
            Some(img) => {
                let (d, p) = img.wire_fields(role)?;
                (Some(img.image_ref.clone()), d, p)
            }
            None => (None, None, None),
        };
        let req = ScoreResponseRequest {
            instruction: instruction.to_string(),
            response: response.to_string(),
            image_ref,
            image_data,
            image_path,
        };
        let reply: ScoreResponsePayload = self.invoke(role, &req).await?;
        if !(reply.scalar.is_finite() && reply.attributes.is_finite()) {
            return Err(GatewayError::Protocol {
                role,
                reason: "non-finite response score".into(),
            });
        }
        Ok(reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_limits() {
        assert!(BackendEndpoint::new(Role::ImageGen, "http://x", Duration::from_secs(1), 5).is_ok());
        assert!(BackendEndpoint::new(Role::ImageGen, "http://x", Duration::from_secs(1), 6).is_err());
        assert!(BackendEndpoint::new(Role::ImageGen, "http://x", Duration::ZERO, 1).is_err());
    }

    #[test]
    fn backoff_schedule() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(0, 0.0), Duration::from_millis(250));
        assert_eq!(p.delay(1, 0.0), Duration::from_millis(500));
        assert_eq!(p.delay(2, 1.0), Duration::from_millis(1200));
        assert_eq!(p.delay(10, 0.0), Duration::from_secs(5));
        assert_eq!(p.delay(0, -1.0), Duration::from_millis(200));
    }

    #[test]
    fn retryable_classes() {
        assert!(BackendError::Status { status: 503, envelope: None }.is_retryable());
        assert!(!BackendError::Status { status: 400, envelope: None }.is_retryable());
        assert!(BackendError::Timeout.is_retryable());
    }
}
