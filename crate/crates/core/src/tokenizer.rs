//! Pluggable tokenization.
//!
//! The default [`WordPunctTokenizer`] splits on whitespace, emits each
//! punctuation or symbol character as its own token and falls back to one
//! `<0xNN>` token per UTF-8 byte for characters it cannot segment (control
//! and other non-printing characters).

use std::ops::Range;

/// Numeric token identifier. Zero is reserved for [`DOC_SEPARATOR`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct TokenId(pub u64);

/// Marks document boundaries in materialized streams (BOS/EOS analog).
pub const DOC_SEPARATOR: TokenId = TokenId(0);

impl TokenId {
    /// Stable id for a token string: FNV-1a 64 of its bytes, remapped away from 0.
    pub fn of(piece: &str) -> TokenId {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in piece.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        TokenId(if h == 0 { 1 } else { h })
    }

    pub fn to_le_bytes(self) -> [u8; 8] {
        self.0.to_le_bytes()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub piece: String,
    /// Byte range in the source text.
    pub span: Range<usize>,
}

pub trait Tokenizer: Send + Sync {
    /// Identifier recorded in manifests.
    fn id(&self) -> &str;

    fn tokenize(&self, text: &str) -> Vec<Token>;

    fn count(&self, text: &str) -> usize {
        self.tokenize(text).len()
    }

    fn pieces(&self, text: &str) -> Vec<String> {
        self.tokenize(text).into_iter().map(|t| t.piece).collect()
    }

    fn ids(&self, text: &str) -> Vec<TokenId> {
        self.tokenize(text).iter().map(|t| TokenId::of(&t.piece)).collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WordPunctTokenizer;

impl WordPunctTokenizer {
    pub const ID: &'static str = "word-punct-bytes/v1";
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '\''
}

impl Tokenizer for WordPunctTokenizer {
    fn id(&self) -> &str {
        Self::ID
    }

    fn tokenize(&self, text: &str) -> Vec<Token> {
        let mut out = Vec::new();
        let mut word_start: Option<usize> = None;
        for (i, c) in text.char_indices() {
            if is_word_char(c) {
                word_start.get_or_insert(i);
                continue;
            }
            if let Some(s) = word_start.take() {
                out.push(Token { piece: text[s..i].to_string(), span: s..i });
            }
            if c.is_whitespace() {
                continue;
            }
            let end = i + c.len_utf8();
            if c.is_control() || is_unassigned_like(c) {
                for (k, b) in text[i..end].bytes().enumerate() {
                    out.push(Token { piece: format!("<0x{b:02X}>"), span: i + k..i + k + 1 });
                }
            } else {
                out.push(Token { piece: text[i..end].to_string(), span: i..end });
            }
        }
        if let Some(s) = word_start {
            out.push(Token { piece: text[s..].to_string(), span: s..text.len() });
        }
        out
    }

    fn count(&self, text: &str) -> usize {
        let mut n = 0;
        let mut in_word = false;
        for c in text.chars() {
            if is_word_char(c) {
                if !in_word {
                    n += 1;
                    in_word = true;
                }
                continue;
            }
            in_word = false;
            if c.is_whitespace() {
                continue;
            }
            n += if c.is_control() || is_unassigned_like(c) { c.len_utf8() } else { 1 };
        }
        n
    }
}

// Private-use, noncharacters and format characters (zero-width joiners, BOMs).
fn is_unassigned_like(c: char) -> bool {
    let u = c as u32;
    (0xE000..=0xF8FF).contains(&u)
        || (0xFDD0..=0xFDEF).contains(&u)
        || (u & 0xFFFE) == 0xFFFE
        || matches!(u, 0x200B..=0x200F | 0x2060..=0x2064 | 0xFEFF)
}

pub fn default_tokenizer() -> Box<dyn Tokenizer> {
    Box::new(WordPunctTokenizer)
}

/// Resolve a tokenizer by its identifier.
pub fn tokenizer_by_id(id: &str) -> Option<Box<dyn Tokenizer>> {
    match id {
        WordPunctTokenizer::ID | "default" => Some(Box::new(WordPunctTokenizer)),
        _ => None,
    }
}
