//! Hashed word-piece tokenizer.

use serde::{Deserialize, Serialize};

pub const CLS_ID: u32 = 0;
pub const PAD_ID: u32 = 1;
pub const UNK_ID: u32 = 2;
pub const EOS_ID: u32 = 3;
pub const RESERVED_IDS: usize = 4;
pub const MAX_LEN: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub truncated: bool,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Lower-cased pieces: alphanumeric runs, and each other non-space character
/// on its own.
pub fn word_pieces(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !c.is_whitespace() {
                out.push(c.to_lowercase().collect());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn token_id(piece: &str, vocab_size: usize) -> u32 {
    assert!(vocab_size > RESERVED_IDS, "vocab_size must exceed the reserved ids");
    (fnv1a64(piece.as_bytes()) % (vocab_size - RESERVED_IDS) as u64) as u32 + RESERVED_IDS as u32
}

/// Hash pieces into `[4, vocab_size)` and truncate to `max_len`. A sentence
/// without any piece maps to a single UNK.
pub fn tokenize(text: &str, vocab_size: usize, max_len: usize) -> TokenSeq {
    let pieces = word_pieces(text);
    if pieces.is_empty() {
        return TokenSeq { ids: vec![UNK_ID], truncated: false };
    }
    let truncated = pieces.len() > max_len;
    let ids = pieces.iter().take(max_len).map(|p| token_id(p, vocab_size)).collect();
    TokenSeq { ids, truncated }
}
