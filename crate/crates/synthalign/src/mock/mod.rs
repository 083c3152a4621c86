//! Deterministic in-process backend serving all five roles.
//!
//! Every reply is a pure function of the request body and the mock seed.
//! Images are small PNGs that carry their generation parameters in a `tEXt`
//! chunk, so the scorer can recompute the closed-form score from the image
//! alone. Only the optional latency, fault injection and statistics depend on
//! call order.

mod server;

use std::collections::BTreeMap;
use std::io::Cursor;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::time::Duration;

use async_trait::async_trait;
use base64::Engine;
use serde::{Deserialize, Serialize};
use synthalign_core::mock_model::{
    image_score, instruction_from_prompt, response_attributes, response_score, response_text, Tier,
    RESPONSE_NOISE_HALF_WIDTH,
};
use synthalign_core::seeding::{content_digest, hash_parts};

use crate::config::DEFAULT_RESPONDERS;
use crate::gateway::{Backend, BackendError};
use crate::protocol::*;

pub use server::MockServer;

pub const MAX_IMAGE_SIDE: u32 = 512;
const PARAMS_KEYWORD: &str = "synthalign";

/// Score subtracted when an image is scored against a prompt other than the
/// one it was generated from.
pub const PROMPT_MISMATCH_PENALTY: f64 = 1.0;

/// Injected failure for matching requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultRule {
    pub role: Role,
    /// Restricts the rule to one responder (respond and response_score only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub responder_id: Option<String>,
    #[serde(default = "default_fault_status")]
    pub status: u16,
    /// Sleep before failing; longer than the client timeout simulates a hang.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_ms: Option<u64>,
    /// Number of matching calls to fail; unlimited when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<u32>,
}

fn default_fault_status() -> u16 {
    503
}

fn default_noise() -> f64 {
    RESPONSE_NOISE_HALF_WIDTH
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockConfig {
    /// Seed of the mock's own noise; the run's global seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_noise")]
    pub response_noise: f64,
    /// Quality tier per responder id; unlisted ids get a hash-derived tier.
    #[serde(default = "default_tiers")]
    pub tiers: BTreeMap<String, Tier>,
    /// Replaces every response score with this constant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_score_override: Option<f64>,
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub faults: Vec<FaultRule>,
}

pub fn default_tiers() -> BTreeMap<String, Tier> {
    const TIERS: [u8; 5] = [1, 2, 3, 4, 4];
    DEFAULT_RESPONDERS
        .iter()
        .zip(TIERS)
        .map(|(id, t)| (id.to_string(), Tier::new(t).expect("valid tier")))
        .collect()
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            seed: None,
            response_noise: RESPONSE_NOISE_HALF_WIDTH,
            tiers: default_tiers(),
            response_score_override: None,
            latency_ms: 0,
            faults: Vec::new(),
        }
    }
}

/// Per-role call counters.
#[derive(Debug, Default)]
pub struct MockStats {
    calls: [AtomicU64; 5],
    inflight: [AtomicU64; 5],
    max_inflight: [AtomicU64; 5],
}

impl MockStats {
    pub fn calls(&self, role: Role) -> u64 {
        self.calls[role.index()].load(Ordering::SeqCst)
    }

    pub fn total_calls(&self) -> u64 {
        Role::ALL.iter().map(|&r| self.calls(r)).sum()
    }

    /// Highest number of concurrently open requests seen for `role`.
    pub fn max_inflight(&self, role: Role) -> u64 {
        self.max_inflight[role.index()].load(Ordering::SeqCst)
    }
}

struct InflightGuard<'a>(&'a AtomicU64);

impl Drop for InflightGuard<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

pub struct MockBackend {
    seed: u64,
    config: MockConfig,
    fault_hits: Vec<AtomicU32>,
    stats: MockStats,
}

type Reply = (u16, Vec<u8>);

fn reject(status: u16, code: &str, msg: impl Into<String>) -> Reply {
    (status, ErrorEnvelope::new(code, msg).to_bytes())
}

fn invalid(msg: impl Into<String>) -> Reply {
    reject(400, error_code::INVALID_REQUEST, msg)
}

fn ok<T: Serialize>(body: &T) -> Reply {
    (200, serde_json::to_vec(body).expect("reply serializes"))
}

fn parse<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, Reply> {
    serde_json::from_slice(body).map_err(|e| invalid(format!("malformed request: {e}")))
}

/// Responder id from the `[id]` tag every mock response starts with.
pub fn responder_tag(response: &str) -> Option<&str> {
    response.strip_prefix('[')?.split_once(']').map(|(id, _)| id)
}

/// Parameters recovered from a mock-generated image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageParams {
    pub guidance_scale: f64,
    pub seed: u64,
    pub prompt_hash: u64,
}

fn prompt_hash(prompt: &str) -> u64 {
    hash_parts(&[b"prompt", prompt.as_bytes()])
}

/// Renders the deterministic RGB PNG for a generation request.
pub fn render_image(prompt: &str, guidance_scale: f64, seed: u64, width: u32, height: u32) -> Vec<u8> {
    let h = hash_parts(&[
        b"image",
        prompt.as_bytes(),
        &guidance_scale.to_bits().to_le_bytes(),
        &seed.to_le_bytes(),
    ]);
    let b = h.to_le_bytes();
    let (w, hh) = (width as usize, height as usize);
    let mut pixels = Vec::with_capacity(w * hh * 3);
    // Sharper gradients for higher guidance keeps the images visibly distinct.
    let contrast = (guidance_scale.clamp(1.0, 20.0) * 12.0) as usize;
    for y in 0..hh {
        for x in 0..w {
            let inside = x >= w / 4 && x < w * 3 / 4 && y >= hh / 4 && y < hh * 3 / 4;
            let r = (b[0] as usize + x * contrast / w.max(1)) as u8;
            let g = (b[1] as usize + y * contrast / hh.max(1)) as u8;
            let bl = if inside { b[2] ^ 0xff } else { b[3] };
            pixels.extend_from_slice(&[r, g, bl]);
        }
    }
    let text = format!(
        "g={:016x};seed={seed};prompt={:016x}",
        guidance_scale.to_bits(),
        prompt_hash(prompt)
    );
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.add_text_chunk(PARAMS_KEYWORD.to_string(), text)
            .expect("text chunk is latin-1");
        let mut writer = enc.write_header().expect("in-memory PNG header");
        writer.write_image_data(&pixels).expect("in-memory PNG body");
    }
    out
}

/// Reads the generation parameters back from a mock PNG; `None` for any image
/// the mock did not produce.
pub fn read_image_params(bytes: &[u8]) -> Option<ImageParams> {
    let reader = png::Decoder::new(Cursor::new(bytes)).read_info().ok()?;
    let chunk = reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .find(|c| c.keyword == PARAMS_KEYWORD)?;
    let mut g = None;
    let mut seed = None;
    let mut prompt = None;
    for field in chunk.text.split(';') {
        let (k, v) = field.split_once('=')?;
        match k {
            "g" => g = Some(f64::from_bits(u64::from_str_radix(v, 16).ok()?)),
            "seed" => seed = Some(v.parse().ok()?),
            "prompt" => prompt = Some(u64::from_str_radix(v, 16).ok()?),
            _ => return None,
        }
    }
    Some(ImageParams {
        guidance_scale: g?,
        seed: seed?,
        prompt_hash: prompt?,
    })
}

fn load_image(image_ref: &str, data: Option<&str>, path: Option<&str>) -> Result<Vec<u8>, Reply> {
    let bytes = match (data, path) {
        (Some(d), _) => base64::engine::general_purpose::STANDARD
            .decode(d)
            .map_err(|e| invalid(format!("image_data is not base64: {e}")))?,
        (None, Some(p)) => std::fs::read(p).map_err(|e| invalid(format!("cannot read image_path {p}: {e}")))?,
        (None, None) => return Err(invalid("image_data or image_path is required")),
    };
    if content_digest(&bytes) != image_ref {
        return Err(invalid(format!("image bytes do not match image_ref {image_ref}")));
    }
    Ok(bytes)
}

impl MockBackend {
    /// `global_seed` is used when `config.seed` is unset.
    pub fn new(config: MockConfig, global_seed: u64) -> Self {
        let fault_hits = config.faults.iter().map(|_| AtomicU32::new(0)).collect();
        Self {
            seed: config.seed.unwrap_or(global_seed),
            config,
            fault_hits,
            stats: MockStats::default(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stats(&self) -> &MockStats {
        &self.stats
    }

    pub fn tier(&self, responder_id: &str) -> Tier {
        self.config
            .tiers
            .get(responder_id)
            .copied()
            .unwrap_or_else(|| Tier::from_id_hash(responder_id))
    }

    /// Full request handling, including latency and injected faults.
    pub async fn respond(&self, role: Role, body: &[u8]) -> Reply {
        let i = role.index();
        self.stats.calls[i].fetch_add(1, Ordering::SeqCst);
        let now = self.stats.inflight[i].fetch_add(1, Ordering::SeqCst) + 1;
        self.stats.max_inflight[i].fetch_max(now, Ordering::SeqCst);
        let _guard = InflightGuard(&self.stats.inflight[i]);

        if self.config.latency_ms > 0 {
            tokio::time::sleep(Duration::from_millis(self.config.latency_ms)).await;
        }
        if let Some(rule) = self.matching_fault(role, body) {
            if let Some(ms) = rule.delay_ms {
                tokio::time::sleep(Duration::from_millis(ms)).await;
            }
            return reject(
                rule.status,
                error_code::INJECTED_FAULT,
                format!("fault injected for {role}"),
            );
        }
        self.handle(role, body)
    }

    fn matching_fault(&self, role: Role, body: &[u8]) -> Option<&FaultRule> {
        for (rule, hits) in self.config.faults.iter().zip(&self.fault_hits) {
            if rule.role != role {
                continue;
            }
            if let Some(want) = &rule.responder_id {
                if request_responder(role, body).as_deref() != Some(want.as_str()) {
                    continue;
                }
            }
            match rule.times {
                None => return Some(rule),
                Some(n) => {
                    if hits.fetch_add(1, Ordering::SeqCst) < n {
                        return Some(rule);
                    }
                }
            }
        }
        None
    }

    /// Pure request handling: the reply depends only on `body` and the seed.
    pub fn handle(&self, role: Role, body: &[u8]) -> Reply {
        let result = match role {
            Role::ImageGen => self.generate_image(body),
            Role::ImageScore => self.score_image(body),
            Role::Instruct => self.instruct(body),
            Role::Respond => self.generate_response(body),
            Role::ResponseScore => self.score_response(body),
        };
        result.unwrap_or_else(|e| e)
    }

    fn generate_image(&self, body: &[u8]) -> Result<Reply, Reply> {
        let req: GenerateImageRequest = parse(body)?;
        if req.prompt.trim().is_empty() {
            return Err(invalid("prompt is empty"));
        }
        if !(req.guidance_scale.is_finite() && req.guidance_scale > 0.0) {
            return Err(invalid("guidance_scale must be positive"));
        }
        if !(1..=MAX_IMAGE_SIDE).contains(&req.width) || !(1..=MAX_IMAGE_SIDE).contains(&req.height) {
            return Err(invalid(format!("width and height must be in 1..={MAX_IMAGE_SIDE}")));
        }
        let png = render_image(&req.prompt, req.guidance_scale, req.seed, req.width, req.height);
        Ok(ok(&GenerateImageReply {
            image_ref: content_digest(&png),
            guidance_scale: req.guidance_scale,
            seed: req.seed,
            width: req.width,
            height: req.height,
            image_data: Some(base64::engine::general_purpose::STANDARD.encode(&png)),
            image_path: None,
        }))
    }

    fn score_image(&self, body: &[u8]) -> Result<Reply, Reply> {
        let req: ScoreImageRequest = parse(body)?;
        let bytes = load_image(&req.image_ref, req.image_data.as_deref(), req.image_path.as_deref())?;
        let params = read_image_params(&bytes)
            .ok_or_else(|| reject(422, error_code::UNSUPPORTED_IMAGE, "image was not produced by this mock"))?;
        let mut scalar = image_score(self.seed, params.seed, params.guidance_scale);
        if params.prompt_hash != prompt_hash(&req.prompt) {
            scalar -= PROMPT_MISMATCH_PENALTY;
        }
        Ok(ok(&ScoreImageReply { scalar }))
    }

    fn instruct(&self, body: &[u8]) -> Result<Reply, Reply> {
        let req: InstructionRequest = parse(body)?;
        if req.prompt.trim().is_empty() {
            return Err(invalid("prompt is empty"));
        }
        if let Some(r) = &req.image_ref {
            load_image(r, req.image_data.as_deref(), req.image_path.as_deref())?;
        }
        Ok(ok(&InstructionReply {
            instruction: instruction_from_prompt(&req.prompt),
        }))
    }

    fn generate_response(&self, body: &[u8]) -> Result<Reply, Reply> {
        let req: GenerateResponseRequest = parse(body)?;
        if req.instruction.trim().is_empty() || req.responder_id.is_empty() {
            return Err(invalid("instruction and responder_id are required"));
        }
        if req.responder_id.contains([']', '\n']) {
            return Err(invalid("responder_id may not contain ']' or newlines"));
        }
        load_image(&req.image_ref, req.image_data.as_deref(), req.image_path.as_deref())?;
        let tier = self.tier(&req.responder_id);
        Ok(ok(&GenerateResponseReply {
            response: response_text(&req.instruction, &req.responder_id, tier, self.seed),
            responder_id: req.responder_id,
        }))
    }

    fn score_response(&self, body: &[u8]) -> Result<Reply, Reply> {
        let req: ScoreResponseRequest = parse(body)?;
        if req.response.trim().is_empty() {
            return Err(invalid("response is empty"));
        }
        if let Some(r) = &req.image_ref {
            load_image(r, req.image_data.as_deref(), req.image_path.as_deref())?;
        }
        let responder = responder_tag(&req.response).unwrap_or("");
        let tier = if responder.is_empty() {
            Tier::from_id_hash(&req.response)
        } else {
            self.tier(responder)
        };
        let chars = req.response.chars().count();
        let scalar = self.config.response_score_override.unwrap_or_else(|| {
            response_score(
                tier,
                chars,
                self.config.response_noise,
                self.seed,
                &req.instruction,
                responder,
            )
        });
        Ok(ok(&ScoreResponsePayload {
            scalar,
            attributes: response_attributes(scalar, chars, self.seed, responder),
        }))
    }
}

fn request_responder(role: Role, body: &[u8]) -> Option<String> {
    match role {
        Role::Respond => serde_json::from_slice::<GenerateResponseRequest>(body)
            .ok()
            .map(|r| r.responder_id),
        Role::ResponseScore => serde_json::from_slice::<ScoreResponseRequest>(body)
            .ok()
            .and_then(|r| responder_tag(&r.response).map(str::to_string)),
        _ => None,
    }
}

#[async_trait]
impl Backend for MockBackend {
    async fn call(&self, role: Role, body: Vec<u8>) -> Result<Vec<u8>, BackendError> {
        let (status, bytes) = self.respond(role, &body).await;
        if (200..300).contains(&status) {
            Ok(bytes)
        } else {
            Err(BackendError::from_status(status, &bytes))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_params_survive_png_round_trip() {
        let png = render_image("a red cube", 7.0, 42, 8, 8);
        let p = read_image_params(&png).unwrap();
        assert_eq!(p.guidance_scale, 7.0);
        assert_eq!(p.seed, 42);
        assert_eq!(p.prompt_hash, prompt_hash("a red cube"));
        assert_eq!(png, render_image("a red cube", 7.0, 42, 8, 8));
        assert_ne!(png, render_image("a red cube", 9.0, 42, 8, 8));
    }

    #[test]
    fn foreign_bytes_are_not_mock_images() {
        assert!(read_image_params(b"not a png").is_none());
    }

    #[test]
    fn tag_extraction() {
        assert_eq!(responder_tag("[a-b] text"), Some("a-b"));
        assert_eq!(responder_tag("text"), None);
    }

    #[test]
    fn default_roster_tiers() {
        let m = MockBackend::new(MockConfig::default(), 1);
        assert_eq!(m.tier(DEFAULT_RESPONDERS[0]), Tier::BEST);
        assert_eq!(m.tier(DEFAULT_RESPONDERS[4]), Tier::WORST);
    }

    #[tokio::test]
    async fn counted_faults_expire() {
        let cfg = MockConfig {
            faults: vec![FaultRule {
                role: Role::Instruct,
                responder_id: None,
                status: 500,
                delay_ms: None,
                times: Some(2),
            }],
            ..MockConfig::default()
        };
        let m = MockBackend::new(cfg, 1);
        let body = br#"{"prompt":"a red cube"}"#;
        assert_eq!(m.respond(Role::Instruct, body).await.0, 500);
        assert_eq!(m.respond(Role::Instruct, body).await.0, 500);
        assert_eq!(m.respond(Role::Instruct, body).await.0, 200);
        assert_eq!(m.stats().calls(Role::Instruct), 3);
    }
}
