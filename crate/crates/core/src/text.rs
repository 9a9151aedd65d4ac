//! String normalization shared by leakage checks, dedup keys, and evaluation.

use unicode_normalization::UnicodeNormalization;

/// NFC, full Unicode case folding, whitespace runs collapsed to one space,
/// ends trimmed. Punctuation is kept.
pub fn normalize_text(s: &str) -> String {
    let composed: String = s.nfc().collect();
    let folded = caseless::default_case_fold_str(&composed);
    // case folding can decompose (e.g. U+0130), so recompose afterwards
    let folded: String = folded.nfc().collect();
    let mut out = String::with_capacity(folded.len());
    for word in folded.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Hex SHA-256 over length-prefixed fields, so `("ab", "c")` and `("a", "bc")`
/// never collide.
pub fn stable_hash<'a, I>(fields: I) -> String
where
    I: IntoIterator<Item = &'a str>,
{
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for field in fields {
        hasher.update((field.len() as u64).to_le_bytes());
        hasher.update(field.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// First 8 bytes of [`stable_hash`] as an integer; used to derive seeds.
pub fn stable_hash_u64<'a, I>(fields: I) -> u64
where
    I: IntoIterator<Item = &'a str>,
{
    let h = stable_hash(fields);
    u64::from_str_radix(&h[..16], 16).expect("hex digest")
}
