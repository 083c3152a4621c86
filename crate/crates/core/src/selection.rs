//! Argmax image selection and best/worst response pairing.
//!
//! Tie policy:
//! * images with equal top scores resolve to the lowest guidance scale;
//! * responses with equal scores resolve by `responder_id` in lexicographic
//!   order, for both the chosen and the rejected side;
//! * a response set whose maximum equals its minimum carries no preference and
//!   is reported as [`Error::DegeneratePair`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Two guidance scales closer than this are considered the same scale.
pub const SCALE_EPSILON: f64 = 1e-9;

/// One generated image for a prompt at a given guidance scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageCandidate {
    pub prompt_id: String,
    pub guidance_scale: f64,
    /// Content handle, `sha256:<hex>` of the image bytes.
    pub image_ref: String,
    pub seed: u64,
    pub score: Option<f64>,
}

/// The guidance-scale sweep of one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageCandidateSet {
    pub prompt_id: String,
    pub candidates: Vec<ImageCandidate>,
}

impl ImageCandidateSet {
    /// Checks that the set holds exactly one candidate per configured scale
    /// and that every present score is finite.
    pub fn validate(&self, scales: &[f64]) -> Result<()> {
        if self.candidates.len() != scales.len() {
            return Err(domain(format!(
                "prompt {}: {} candidates for {} configured scales",
                self.prompt_id,
                self.candidates.len(),
                scales.len()
            )));
        }
        for (i, c) in self.candidates.iter().enumerate() {
            if c.prompt_id != self.prompt_id {
                return Err(domain(format!(
                    "candidate for prompt {} inside set for {}",
                    c.prompt_id, self.prompt_id
                )));
            }
            if !scales.iter().any(|&s| same_scale(s, c.guidance_scale)) {
                return Err(domain(format!(
                    "guidance scale {} is not configured",
                    c.guidance_scale
                )));
            }
            if self.candidates[..i]
                .iter()
                .any(|o| same_scale(o.guidance_scale, c.guidance_scale))
            {
                return Err(domain(format!(
                    "guidance scale {} appears twice",
                    c.guidance_scale
                )));
            }
            if let Some(s) = c.score {
                if !s.is_finite() {
                    return Err(domain(format!("non-finite image score {s}")));
                }
            }
        }
        Ok(())
    }
}

pub fn same_scale(a: f64, b: f64) -> bool {
    libm::fabs(a - b) <= SCALE_EPSILON
}

/// The winning image of a sweep plus the scores of every other candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedImage {
    pub prompt_id: String,
    pub winner: ImageCandidate,
    /// `(guidance_scale, score)` of the non-winners, ordered by scale.
    pub rejected_scores: Vec<(f64, f64)>,
}

impl SelectedImage {
    pub fn winner_score(&self) -> f64 {
        self.winner.score.unwrap_or(f64::NAN)
    }

    /// All `(guidance_scale, score)` pairs including the winner, by scale.
    pub fn all_scores(&self) -> Vec<(f64, f64)> {
        let mut all = self.rejected_scores.clone();
        all.push((self.winner.guidance_scale, self.winner_score()));
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        all
    }
}

/// Picks the highest-scoring image. Equal scores go to the lowest guidance
/// scale, so the result does not depend on candidate order.
pub fn select_best_image(set: &ImageCandidateSet) -> Result<SelectedImage> {
    if set.candidates.is_empty() {
        return Err(domain(format!("prompt {}: empty candidate set", set.prompt_id)));
    }
    let mut ordered: Vec<(&ImageCandidate, f64)> = Vec::with_capacity(set.candidates.len());
    for c in &set.candidates {
        match c.score {
            Some(s) if s.is_finite() => ordered.push((c, s)),
            Some(s) => return Err(domain(format!("non-finite image score {s}"))),
            None => {
                return Err(Error::State(format!(
                    "prompt {}: candidate at guidance {} is unscored",
                    set.prompt_id, c.guidance_scale
                )))
            }
        }
    }
    ordered.sort_by(|a, b| a.0.guidance_scale.total_cmp(&b.0.guidance_scale));

    let mut best = 0;
    for (i, &(_, s)) in ordered.iter().enumerate().skip(1) {
        if s > ordered[best].1 {
            best = i;
        }
    }
    let winner = ordered[best].0.clone();
    let rejected_scores = ordered
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .map(|(_, (c, s))| (c.guidance_scale, *s))
        .collect();
    Ok(SelectedImage {
        prompt_id: set.prompt_id.clone(),
        winner,
        rejected_scores,
    })
}

/// Per-attribute scores reported by the response scorer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeScores {
    pub helpfulness: f64,
    pub correctness: f64,
    pub coherence: f64,
    pub complexity: f64,
    pub verbosity: f64,
}

impl AttributeScores {
    pub const NAMES: [&'static str; 5] = [
        "helpfulness",
        "correctness",
        "coherence",
        "complexity",
        "verbosity",
    ];

    pub fn values(&self) -> [f64; 5] {
        [
            self.helpfulness,
            self.correctness,
            self.coherence,
            self.complexity,
            self.verbosity,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

/// One model response to the (image, instruction) input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseCandidate {
    pub responder_id: String,
    pub text: String,
    pub attribute_scores: AttributeScores,
    pub scalar_score: f64,
}

impl ResponseCandidate {
    pub fn validate(&self) -> Result<()> {
        if self.text.is_empty() {
            return Err(domain(format!("responder {} returned empty text", self.responder_id)));
        }
        if !self.scalar_score.is_finite() {
            return Err(domain(format!(
                "responder {} has non-finite score {}",
                self.responder_id, self.scalar_score
            )));
        }
        if !self.attribute_scores.is_finite() {
            return Err(domain(format!(
                "responder {} has non-finite attribute scores",
                self.responder_id
            )));
        }
        Ok(())
    }
}

/// A chosen/rejected response pair for one (image, instruction) input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt_id: String,
    pub image_ref: String,
    pub instruction: String,
    pub chosen: ResponseCandidate,
    pub rejected: ResponseCandidate,
}

impl PreferencePair {
    pub fn margin(&self) -> f64 {
        self.chosen.scalar_score - self.rejected.scalar_score
    }
}

/// Chosen = highest scalar score, rejected = lowest.
pub fn select_preference_pair(
    prompt_id: &str,
    image_ref: &str,
    instruction: &str,
    candidates: &[ResponseCandidate],
) -> Result<PreferencePair> {
    if candidates.len() < 2 {
        return Err(domain(format!(
            "prompt {prompt_id}: need at least 2 response candidates, got {}",
            candidates.len()
        )));
    }
    for c in candidates {
        c.validate()?;
    }
    let mut order: Vec<&ResponseCandidate> = candidates.iter().collect();
    order.sort_by(|a, b| a.responder_id.cmp(&b.responder_id));

    let mut best = order[0];
    let mut worst = order[0];
    for &c in &order[1..] {
        if c.scalar_score > best.scalar_score {
            best = c;
        }
        if c.scalar_score < worst.scalar_score {
            worst = c;
        }
    }
    if best.scalar_score == worst.scalar_score {
        return Err(Error::DegeneratePair {
            count: candidates.len(),
            score: best.scalar_score,
        });
    }
    if best.text == worst.text {
        return Err(domain(format!(
            "prompt {prompt_id}: best and worst responses have identical text"
        )));
    }
    Ok(PreferencePair {
        prompt_id: prompt_id.into(),
        image_ref: image_ref.into(),
        instruction: instruction.into(),
        chosen: best.clone(),
        rejected: worst.clone(),
    })
}

/// Indices of `scores` from best to worst. The sort is stable, so equal scores
/// keep their input order.
pub fn rank_candidates(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| match scores[b].partial_cmp(&scores[a]) {
        Some(o) => o,
        None => scores[b].total_cmp(&scores[a]),
    });
    idx
}

/// `inverse[perm[i]] == i`.
pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = alloc::vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Returns `true` if `perm` contains each of `0..perm.len()` exactly once.
pub fn is_permutation(perm: &[usize]) -> bool {
    let mut seen = alloc::vec![false; perm.len()];
    for &p in perm {
        match seen.get_mut(p) {
            Some(slot) if !*slot => *slot = true,
            _ => return false,
        }
    }
    true
}
