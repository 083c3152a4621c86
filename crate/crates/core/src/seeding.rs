//! Platform-stable hashing for seeds and deterministic noise.
//!
//! Everything here goes through SHA-256 over length-prefixed parts, so results
//! are identical on every target regardless of endianness or pointer width.

use alloc::string::String;

use sha2::{Digest, Sha256};

/// Hashes a sequence of byte strings to a `u64`. Each part is prefixed with
/// its length so `["ab", "c"]` and `["a", "bc"]` differ.
pub fn hash_parts(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for part in parts {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    let out = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&out[..8]);
    u64::from_be_bytes(first)
}

/// Maps a hash to a uniform value in `[0, 1)` using its top 53 bits.
pub fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform value in `[-half_width, half_width)`.
pub fn centered_noise(h: u64, half_width: f64) -> f64 {
    (2.0 * unit_interval(h) - 1.0) * half_width
}

/// Seed for one image candidate: a function of the run's global seed, the
/// prompt and the guidance scale only.
pub fn candidate_seed(global_seed: u64, prompt_id: &str, guidance_scale: f64) -> u64 {
    hash_parts(&[
        b"candidate-seed",
        &global_seed.to_le_bytes(),
        prompt_id.as_bytes(),
        &guidance_scale.to_bits().to_le_bytes(),
    ])
}

/// `sha256:<lowercase hex>` of `bytes`.
pub fn content_digest(bytes: &[u8]) -> String {
    let out = Sha256::digest(bytes);
    let mut s = String::with_capacity(7 + 64);
    s.push_str("sha256:");
    for b in out.iter() {
        s.push(hex_nibble(b >> 4));
        s.push(hex_nibble(b & 0x0f));
    }
    s
}

fn hex_nibble(n: u8) -> char {
    char::from(if n < 10 { b'0' + n } else { b'a' + n - 10 })
}
