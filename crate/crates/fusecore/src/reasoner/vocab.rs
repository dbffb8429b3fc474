//! Closed word-level vocabulary with reserved control tokens and a
//! single-character fallback. Tokenization lowercases, splits
//! alphanumeric runs into words, and treats each punctuation mark as its
//! own token. Detokenization re-inserts spaces between words but not
//! around hyphens or before closing punctuation, so corpus text (which
//! is lowercase and canonically spaced) round-trips exactly.

use std::collections::HashMap;

use crate::error::{FuseError, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;

const RESERVED: [&str; 3] = ["<pad>", "<bos>", "<eos>"];

/// Every word the simulator, narrator, question writer, and prompt
/// templates can produce. Sorted; single letters and digits double as
/// the character fallback.
const WORDS: &[&str] = &[
    "a", "analyze", "and", "at", "b", "back", "based", "between", "blue", "both", "bounce",
    "bounced", "brief", "by", "c", "causal", "circle", "collisions", "confidence", "d", "depicts",
    "down", "e", "each", "end", "events", "explanation", "f", "final", "for", "from", "g", "green",
    "h", "happen", "high", "hit", "i", "in", "information", "is", "it", "j", "justification", "k",
    "keeps", "l", "left", "likely", "m", "medium", "most", "moves", "moving", "n", "next", "no",
    "nothing", "o", "observed", "occurred", "of", "off", "on", "outcome", "p", "predict",
    "prediction", "provide", "provided", "pushed", "q", "r", "red", "relationships", "right", "s",
    "scene", "score", "sequence", "so", "square", "started", "stays", "step", "still", "stopped",
    "subsequent", "t", "the", "these", "three", "to", "top", "triangle", "u", "up", "v", "video",
    "visual", "w", "wall", "what", "will", "with", "x", "y", "yellow", "z", "0", "1", "2", "3",
    "4", "5", "6", "7", "8", "9", "bottom",
];

const PUNCT: &[&str] = &[".", ",", ";", ":", "?", "-"];

/// Bijective token string <-> id mapping.
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// The closed corpus vocabulary used throughout.
    pub fn closed() -> Vocabulary {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut words: Vec<&str> = WORDS.to_vec();
        words.sort_unstable();
        words.dedup();
        tokens.extend(words.iter().map(|s| s.to_string()));
        tokens.extend(PUNCT.iter().map(|s| s.to_string()));
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or_else(|| FuseError::contract(format!("token id {id} outside vocabulary")))
    }

    pub fn is_reserved(&self, id: u32) -> bool {
        id < RESERVED.len() as u32
    }

    /// Stable content hash used to match checkpoints against datasets.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.tokens {
            for b in t.as_bytes() {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x1000_0000_01b3);
            }
            h ^= 0xff;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        h
    }

    /// Lowercase word-level tokenization with character fallback for
    /// out-of-vocabulary words. Characters outside the alphabet are
    /// dropped.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let lower = text.to_lowercase();
        let mut ids = Vec::new();
        let mut word = String::new();
        let flush = |word: &mut String, ids: &mut Vec<u32>| {
            if word.is_empty() {
                return;
            }
            match self.id(word) {
                Some(id) => ids.push(id),
                None => {
                    for ch in word.chars() {
                        if let Some(id) = self.id(&ch.to_string()) {
                            ids.push(id);
                        }
                    }
                }
            }
            word.clear();
        };
        for ch in lower.chars() {
            if ch.is_ascii_alphanumeric() {
                word.push(ch);
            } else {
                flush(&mut word, &mut ids);
                if !ch.is_whitespace() {
                    if let Some(id) = self.id(&ch.to_string()) {
                        ids.push(id);
                    }
                }
            }
        }
        flush(&mut word, &mut ids);
        ids
    }

    /// Inverse of [`tokenize`](Self::tokenize) for canonically spaced
    /// lowercase text. Reserved ids are skipped.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        let mut prev: Option<&str> = None;
        for &id in ids {
            if self.is_reserved(id) {
                continue;
            }
            let Ok(tok) = self.token(id) else { continue };
            let no_space_before = matches!(tok, "." | "," | ";" | ":" | "?" | "-");
            let after_hyphen = prev == Some("-");
            if prev.is_some() && !no_space_before && !after_hyphen {
                out.push(' ');
            }
            out.push_str(tok);
            prev = Some(tok);
        }
        out
    }

    /// Every word token, for closure checks.
    pub fn word_list(&self) -> &[String] {
        &self.tokens
    }
}
