//! Wire protocol shared by the gateway clients, the mock backend and any
//! external model adapter.
//!
//! Every route is `POST /v1/<resource>:<verb>` with a JSON body. Errors use a
//! non-2xx status plus an [`ErrorEnvelope`]. Clients retry only on 5xx and
//! transport timeouts.
//!
//! Images travel as a `sha256:<hex>` reference. Up to [`INLINE_IMAGE_LIMIT`]
//! bytes the PNG is also inlined as base64 in `image_data`; larger images are
//! passed by `image_path` on a filesystem both sides can read.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use synthalign_core::selection::AttributeScores;

pub const API_PREFIX: &str = "/v1";

/// Largest image carried inline in a request or reply.
pub const INLINE_IMAGE_LIMIT: usize = 1 << 20;

pub mod error_code {
    pub const UNKNOWN_ENDPOINT: &str = "unknown_endpoint";
    pub const INVALID_REQUEST: &str = "invalid_request";
    pub const UNSUPPORTED_IMAGE: &str = "unsupported_image";
    pub const INJECTED_FAULT: &str = "injected_fault";
    pub const INTERNAL: &str = "internal";
}

/// The five backend roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    ImageGen,
    ImageScore,
    Instruct,
    Respond,
    ResponseScore,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Role::ImageGen,
        Role::ImageScore,
        Role::Instruct,
        Role::Respond,
        Role::ResponseScore,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::ImageGen => "image_gen",
            Role::ImageScore => "image_score",
            Role::Instruct => "instruct",
            Role::Respond => "respond",
            Role::ResponseScore => "response_score",
        }
    }

    pub fn route(self) -> &'static str {
        match self {
            Role::ImageGen => "/v1/images:generate",
            Role::ImageScore => "/v1/images:score",
            Role::Instruct => "/v1/instructions:generate",
            Role::Respond => "/v1/responses:generate",
            Role::ResponseScore => "/v1/responses:score",
        }
    }

    pub fn from_route(path: &str) -> Option<Role> {
        Role::ALL.into_iter().find(|r| r.route() == path)
    }

    /// Name of the environment variable that overrides this role's URL.
    pub fn env_var(self) -> String {
        format!("SYNTHALIGN_BACKEND_{}_URL", self.as_str().to_ascii_uppercase())
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown backend role {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateImageRequest {
    pub prompt: String,
    pub guidance_scale: f64,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateImageReply {
    pub image_ref: String,
    pub guidance_scale: f64,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_data: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreImageRequest {
    pub prompt: String,
    pub image_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_data: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreImageReply {
    pub scalar: f64,
}

/// Instruction request. The image fields are omitted when the instruction is
/// written from the text-to-image prompt alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionRequest {
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_data: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionReply {
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateResponseRequest {
    pub instruction: String,
    pub responder_id: String,
    pub image_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_data: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateResponseReply {
    pub responder_id: String,
    pub response: String,
}

/// Response scoring request; the image is optional because text-only scorers
/// never see it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreResponseRequest {
    pub instruction: String,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_data: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreResponsePayload {
    pub scalar: f64,
    pub attributes: AttributeScores,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub error_code: String,
    pub message: String,
}

impl ErrorEnvelope {
    pub fn new(error_code: &str, message: impl Into<String>) -> Self {
        Self {
            error_code: error_code.to_string(),
            message: message.into(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("envelope serializes")
    }
}

impl fmt::Display for ErrorEnvelope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.error_code, self.message)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn routes_are_distinct_and_parse_back() {
        for role in Role::ALL {
            assert_eq!(Role::from_route(role.route()), Some(role));
            assert_eq!(role.as_str().parse::<Role>().unwrap(), role);
        }
        assert_eq!(Role::from_route("/v1/images:delete"), None);
    }

    #[test]
    fn env_var_names() {
        assert_eq!(Role::ImageGen.env_var(), "SYNTHALIGN_BACKEND_IMAGE_GEN_URL");
        assert_eq!(Role::ResponseScore.env_var(), "SYNTHALIGN_BACKEND_RESPONSE_SCORE_URL");
    }

    #[test]
    fn score_payload_requires_all_attributes() {
        let ok = r#"{"scalar":0.5,"attributes":{"helpfulness":1,"correctness":1,"coherence":1,"complexity":1,"verbosity":1}}"#;
        assert!(serde_json::from_str::<ScoreResponsePayload>(ok).is_ok());
        let missing = r#"{"scalar":0.5,"attributes":{"helpfulness":1,"correctness":1,"coherence":1,"complexity":1}}"#;
        assert!(serde_json::from_str::<ScoreResponsePayload>(missing).is_err());
        let extra = r#"{"scalar":0.5,"attributes":{"helpfulness":1,"correctness":1,"coherence":1,"complexity":1,"verbosity":1,"safety":1}}"#;
        assert!(serde_json::from_str::<ScoreResponsePayload>(extra).is_err());
    }

    #[test]
    fn optional_image_fields_are_omitted() {
        let req = InstructionRequest {
            prompt: "a red cube".into(),
            image_ref: None,
            image_data: None,
            image_path: None,
        };
        assert_eq!(serde_json::to_string(&req).unwrap(), r#"{"prompt":"a red cube"}"#);
    }
}
