//! Closed-form stand-ins for the generator and scorer models.
//!
//! The mock backend serves these formulas over the wire protocol. They live
//! here so tests can evaluate them directly.
//!
//! Image score: `2.0 − 0.3·|g − 7.0| + u`, `u ~ U(−0.5, 0.5)` drawn from a
//! per-candidate hash.
//!
//! Response score: tier base `{0.8, 0.65, 0.5, 0.35}` plus seeded noise
//! `±0.1`, minus `0.001` per character beyond 600.

use alloc::format;
use alloc::string::String;

use crate::seeding::{centered_noise, hash_parts};
use crate::selection::AttributeScores;

pub const IMAGE_SCORE_BASE: f64 = 2.0;
pub const IMAGE_SCORE_PEAK_SCALE: f64 = 7.0;
pub const IMAGE_SCORE_SLOPE: f64 = 0.3;
pub const IMAGE_NOISE_HALF_WIDTH: f64 = 0.5;

pub const TIER_BASE_SCORES: [f64; 4] = [0.8, 0.65, 0.5, 0.35];
pub const RESPONSE_NOISE_HALF_WIDTH: f64 = 0.1;
pub const VERBOSITY_FREE_CHARS: usize = 600;
pub const VERBOSITY_PENALTY_PER_CHAR: f64 = 0.001;

/// Noiseless part of the image score, maximal at guidance 7.0.
pub fn image_score_peak(guidance_scale: f64) -> f64 {
    IMAGE_SCORE_BASE - IMAGE_SCORE_SLOPE * libm::fabs(guidance_scale - IMAGE_SCORE_PEAK_SCALE)
}

/// Per-candidate uniform noise in `[-0.5, 0.5)`.
pub fn image_score_noise(mock_seed: u64, candidate_seed: u64, guidance_scale: f64) -> f64 {
    let h = hash_parts(&[
        b"image-score",
        &mock_seed.to_le_bytes(),
        &candidate_seed.to_le_bytes(),
        &guidance_scale.to_bits().to_le_bytes(),
    ]);
    centered_noise(h, IMAGE_NOISE_HALF_WIDTH)
}

pub fn image_score(mock_seed: u64, candidate_seed: u64, guidance_scale: f64) -> f64 {
    image_score_peak(guidance_scale) + image_score_noise(mock_seed, candidate_seed, guidance_scale)
}

/// Quality tier of a responder, `1` (best) through `4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Tier(u8);

impl Tier {
    pub const BEST: Tier = Tier(1);
    pub const WORST: Tier = Tier(4);

    pub fn new(tier: u8) -> Option<Self> {
        (1..=4).contains(&tier).then_some(Tier(tier))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn base_score(self) -> f64 {
        TIER_BASE_SCORES[usize::from(self.0 - 1)]
    }

    /// Tier for a responder id with no configured tier.
    pub fn from_id_hash(responder_id: &str) -> Self {
        let h = hash_parts(&[b"tier", responder_id.as_bytes()]);
        Tier((h % 4) as u8 + 1)
    }
}

impl TryFrom<u8> for Tier {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Tier::new(v).ok_or_else(|| format!("tier must be 1..=4, got {v}"))
    }
}

impl From<Tier> for u8 {
    fn from(t: Tier) -> u8 {
        t.0
    }
}

/// Instruction template applied to a text-to-image prompt.
pub fn instruction_from_prompt(prompt: &str) -> String {
    let details = prompt.trim().trim_end_matches(['.', '!', '?']).trim_end();
    format!("Describe the scene: {details}. What are the key objects and their relations?")
}

fn scene_subject(instruction: &str) -> &str {
    instruction
        .strip_prefix("Describe the scene: ")
        .and_then(|rest| rest.split_once(". What are the key objects"))
        .map(|(subject, _)| subject)
        .unwrap_or_else(|| instruction.trim().trim_end_matches(['.', '!', '?']))
        .trim()
}

const OPENERS: [&str; 4] = [
    "The image shows",
    "This picture depicts",
    "In this scene we see",
    "The photo captures",
];

/// Deterministic response text whose style degrades with the tier: tier 1 is
/// short and direct, tier 4 hedges and repeats itself well past the
/// verbosity threshold.
pub fn response_text(instruction: &str, responder_id: &str, tier: Tier, mock_seed: u64) -> String {
    let subject = scene_subject(instruction);
    let h = hash_parts(&[
        b"response-text",
        &mock_seed.to_le_bytes(),
        responder_id.as_bytes(),
        instruction.as_bytes(),
    ]);
    let opener = OPENERS[(h % OPENERS.len() as u64) as usize];
    let mut text = format!("[{responder_id}] {opener} {subject}.");
    match tier.get() {
        1 => text.push_str(
            " The main objects are clearly visible and their spatial relations match the description.",
        ),
        2 => text.push_str(
            " The main objects are visible; their arrangement mostly matches the description, \
             though some details are hard to make out.",
        ),
        3 => {
            text.push_str(
                " There seem to be several objects, and it is possible that they are related in some way. ",
            );
            text.push_str(
                "The scene appears to contain the described elements, although the exact \
                 arrangement may differ. It is possible that other objects are present as well.",
            );
        }
        _ => {
            let filler = " It might possibly be the case that there are more things happening \
                          in the background, perhaps people or animals, but it is hard to say.";
            for _ in 0..6 {
                text.push_str(filler);
            }
        }
    }
    text
}

/// Scalar preference score of a response.
pub fn response_score(
    tier: Tier,
    text_chars: usize,
    noise_half_width: f64,
    mock_seed: u64,
    instruction: &str,
    responder_id: &str,
) -> f64 {
    let h = hash_parts(&[
        b"response-score",
        &mock_seed.to_le_bytes(),
        instruction.as_bytes(),
        responder_id.as_bytes(),
    ]);
    let over = text_chars.saturating_sub(VERBOSITY_FREE_CHARS) as f64;
    tier.base_score() + centered_noise(h, noise_half_width) - VERBOSITY_PENALTY_PER_CHAR * over
}

/// Attribute breakdown reported alongside the scalar. The first four track the
/// scalar with small per-attribute offsets; verbosity is the length in
/// thousands of characters.
pub fn response_attributes(scalar: f64, text_chars: usize, mock_seed: u64, responder_id: &str) -> AttributeScores {
    let offset = |name: &str| {
        let h = hash_parts(&[
            b"attribute",
            &mock_seed.to_le_bytes(),
            responder_id.as_bytes(),
            name.as_bytes(),
        ]);
        centered_noise(h, 0.05)
    };
    AttributeScores {
        helpfulness: scalar + offset("helpfulness"),
        correctness: scalar + offset("correctness"),
        coherence: scalar + offset("coherence"),
        complexity: scalar + offset("complexity"),
        verbosity: text_chars as f64 / 1000.0,
    }
}
