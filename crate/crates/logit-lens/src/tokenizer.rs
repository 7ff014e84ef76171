//! GPT-2 byte-level BPE.
//!
//! Text is split with GPT-2's pre-tokenization pattern, each piece's UTF-8
//! bytes are mapped to printable stand-in characters, and merges are applied
//! lowest rank first. Decoding reverses the byte mapping, so
//! `decode(encode(s)) == s` for every string.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use logit_lens_core::TokenSequence;
use regex::Regex;

use crate::error::{Error, Result};

/// GPT-2 `vocab.json` (`encoder.json`), bundled.
pub const GPT2_VOCAB: &str = include_str!("../assets/gpt2/vocab.json");
/// GPT-2 `merges.txt` (`vocab.bpe`), bundled.
pub const GPT2_MERGES: &str = include_str!("../assets/gpt2/merges.txt");

pub const END_OF_TEXT: &str = "<|endoftext|>";

// `\s+(?!\S)` from the original pattern is handled in `pre_tokenize`, the
// regex crate has no lookahead.
const PATTERN: &str = r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+";

#[derive(Debug, Clone)]
pub struct Tokenizer {
    encoder: HashMap<String, u32>,
    decoder: Vec<Vec<u8>>,
    ranks: HashMap<(String, String), usize>,
    byte_to_char: [char; 256],
    pattern: Regex,
    eot: Option<u32>,
    newline_tokens: Vec<bool>,
}

/// GPT-2's reversible byte → printable-char table.
fn byte_table() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut extra = 0u32;
    for b in 0..=255u8 {
        let printable = matches!(b, b'!'..=b'~' | 0xA1..=0xAC | 0xAE..=0xFF);
        table[b as usize] = if printable {
            char::from(b)
        } else {
            let c = char::from_u32(256 + extra).expect("valid code point");
            extra += 1;
            c
        };
    }
    table
}

impl Tokenizer {
    /// Builds a tokenizer from `vocab.json` text and `merges.txt` text.
    pub fn from_strs(vocab_json: &str, merges: &str) -> Result<Self> {
        let encoder: HashMap<String, u32> = serde_json::from_str(vocab_json)
            .map_err(|e| Error::json("vocab.json", e))?;
        let byte_to_char = byte_table();
        let char_to_byte: HashMap<char, u8> = byte_to_char
            .iter()
            .enumerate()
            .map(|(b, &c)| (c, b as u8))
            .collect();

        let size = encoder.values().copied().max().map_or(0, |m| m as usize + 1);
        let mut decoder = vec![Vec::new(); size];
        let mut seen = vec![false; size];
        for (token, &id) in &encoder {
            if std::mem::replace(&mut seen[id as usize], true) {
                return Err(Error::Tokenizer(format!("duplicate id {id} in vocabulary")));
            }
            decoder[id as usize] = if token == END_OF_TEXT {
                token.as_bytes().to_vec()
            } else {
                token
                    .chars()
                    .map(|c| {
                        char_to_byte.get(&c).copied().ok_or_else(|| {
                            Error::Tokenizer(format!("token {token:?} has unmapped char {c:?}"))
                        })
                    })
                    .collect::<Result<_>>()?
            };
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Tokenizer("vocabulary ids are not contiguous".into()));
        }

        let mut ranks = HashMap::new();
        for (rank, line) in merges
            .lines()
            .filter(|l| !l.starts_with("#version") && !l.trim().is_empty())
            .enumerate()
        {
            let (a, b) = line
                .split_once(' ')
                .ok_or_else(|| Error::Tokenizer(format!("bad merge line {line:?}")))?;
            ranks.insert((a.to_string(), b.to_string()), rank);
        }

        let eot = encoder.get(END_OF_TEXT).copied();
        let newline_tokens = decoder.iter().map(|b| b.contains(&b'\n')).collect();
        Ok(Self {
            encoder,
            decoder,
            ranks,
            byte_to_char,
            pattern: Regex::new(PATTERN).expect("static pattern"),
            eot,
            newline_tokens,
        })
    }

    /// The GPT-2 vocabulary shipped with this crate.
    pub fn gpt2() -> Result<Self> {
        Self::from_strs(GPT2_VOCAB, GPT2_MERGES)
    }

    pub fn from_files(vocab: &Path, merges: &Path) -> Result<Self> {
        let v = fs::read_to_string(vocab).map_err(|e| Error::io(vocab, e))?;
        let m = fs::read_to_string(merges).map_err(|e| Error::io(merges, e))?;
        Self::from_strs(&v, &m)
    }

    pub fn vocab_size(&self) -> usize {
        self.decoder.len()
    }

    pub fn end_of_text(&self) -> Option<u32> {
        self.eot
    }

    /// Whether generation should halt after emitting `id`: end-of-text or any
    /// token containing a newline.
    pub fn is_stop_token(&self, id: u32) -> bool {
        Some(id) == self.eot || self.newline_tokens.get(id as usize).copied().unwrap_or(false)
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.encoder.get(token).copied()
    }

    /// Splits `text` the way GPT-2 does before BPE.
    pub fn pre_tokenize<'t>(&self, text: &'t str) -> Vec<&'t str> {
        let mut pieces = Vec::new();
        let mut pos = 0;
        while pos < text.len() {
            let m = self
                .pattern
                .find_at(text, pos)
                .expect("pattern matches any non-empty remainder");
            let mut end = m.end();
            let piece = m.as_str();
            // `\s+(?!\S)`: a whitespace run followed by a non-space gives its
            // last character to the next piece.
            if end < text.len() && piece.chars().all(char::is_whitespace) {
                let last = piece.chars().next_back().expect("non-empty");
                if piece.len() > last.len_utf8() {
                    end -= last.len_utf8();
                }
            }
            pieces.push(&text[m.start()..end]);
            pos = end;
        }
        pieces
    }

    fn bpe(&self, piece: &str) -> Vec<String> {
        let mut word: Vec<String> = piece
            .bytes()
            .map(|b| self.byte_to_char[b as usize].to_string())
            .collect();
        while word.len() > 1 {
            let best = word
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| {
                    self.ranks
                        .get(&(w[0].clone(), w[1].clone()))
                        .map(|&r| (r, i))
                })
                .min();
            let Some((rank, _)) = best else { break };
            let mut merged = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len()
                    && self.ranks.get(&(word[i].clone(), word[i + 1].clone())) == Some(&rank)
                {
                    merged.push(format!("{}{}", word[i], word[i + 1]));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut word[i]));
                    i += 1;
                }
            }
            word = merged;
        }
        word
    }

    /// Encodes `text`. A literal `<|endoftext|>` becomes the special token.
    pub fn encode(&self, text: &str) -> Result<TokenSequence> {
        let mut ids = Vec::new();
        let mut segments = text.split(END_OF_TEXT).peekable();
        while let Some(segment) = segments.next() {
            self.encode_ordinary(segment, &mut ids)?;
            if segments.peek().is_some() {
                let eot = self
                    .eot
                    .ok_or_else(|| Error::Tokenizer("vocabulary has no end-of-text token".into()))?;
                ids.push(eot);
            }
        }
        Ok(TokenSequence::new(ids))
    }

    fn encode_ordinary(&self, text: &str, ids: &mut Vec<u32>) -> Result<()> {
        for piece in self.pre_tokenize(text) {
            for sym in self.bpe(piece) {
                let id = self
                    .encoder
                    .get(&sym)
                    .copied()
                    .ok_or_else(|| Error::Tokenizer(format!("symbol {sym:?} not in vocabulary")))?;
                ids.push(id);
            }
        }
        Ok(())
    }

    /// Raw bytes of a token sequence.
    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let bytes = self
                .decoder
                .get(id as usize)
                .ok_or_else(|| Error::Tokenizer(format!("token id {id} out of range")))?;
            out.extend_from_slice(bytes);
        }
        Ok(out)
    }

    /// Decodes to text, replacing invalid UTF-8 (a sequence cut inside a
    /// multi-byte character) with U+FFFD.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(ids)?).into_owned())
    }

    /// Display text of one token. Bytes that are not valid UTF-8 on their
    /// own (a fragment of a multi-byte character) are shown as `\xNN`.
    pub fn token_text(&self, id: u32) -> String {
        let Some(bytes) = self.decoder.get(id as usize) else {
            return format!("<{id}>");
        };
        let mut out = String::new();
        for chunk in bytes.utf8_chunks() {
            out.push_str(chunk.valid());
            for b in chunk.invalid() {
                let _ = write!(out, "\\x{b:02x}");
            }
        }
        out
    }

    /// The vocabulary's printable form of a token (`Ġ` for a leading space).
    pub fn token_symbol(&self, id: u32) -> Option<String> {
        let bytes = self.decoder.get(id as usize)?;
        Some(bytes.iter().map(|&b| self.byte_to_char[b as usize]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok() -> Tokenizer {
        Tokenizer::gpt2().unwrap()
    }

    #[test]
    fn bundled_vocab_shape() {
        let t = tok();
        assert_eq!(t.vocab_size(), 50257);
        assert_eq!(t.end_of_text(), Some(50256));
        assert!(t.is_stop_token(50256));
        assert!(t.is_stop_token(198)); // "\n"
        assert!(!t.is_stop_token(6342)); // " Paris"
    }

    #[test]
    fn byte_table_is_a_bijection() {
        let table = byte_table();
        let mut chars: Vec<char> = table.to_vec();
        chars.sort_unstable();
        chars.dedup();
        assert_eq!(chars.len(), 256);
        assert_eq!(table[b' ' as usize], 'Ġ');
        assert_eq!(table[b'\n' as usize], 'Ċ');
    }

    #[test]
    fn empty_string() {
        assert!(tok().encode("").unwrap().is_empty());
    }

    #[test]
    fn pre_tokenization_whitespace_rule() {
        let t = tok();
        assert_eq!(t.pre_tokenize("a  b"), vec!["a", " ", " b"]);
        assert_eq!(t.pre_tokenize("a \n b"), vec!["a", " \n", " b"]);
        assert_eq!(t.pre_tokenize("x   "), vec!["x", "   "]);
        assert_eq!(t.pre_tokenize("I'll go"), vec!["I", "'ll", " go"]);
        assert_eq!(t.pre_tokenize("3.14!?"), vec!["3", ".", "14", "!?"]);
    }

    #[test]
    fn single_ascii_letters_are_single_tokens() {
        let t = tok();
        for c in ('a'..='z').chain('A'..='Z') {
            let s = c.to_string();
            let ids = t.encode(&s).unwrap();
            assert_eq!(ids.len(), 1, "{c}");
            assert_eq!(t.decode(ids.ids()).unwrap(), s);
        }
    }

    #[test]
    fn byte_fragments_are_escaped() {
        let t = tok();
        // "東" is three bytes; GPT-2 splits it across tokens.
        let ids = t.encode("東").unwrap();
        assert!(ids.len() > 1);
        assert!(t.token_text(ids.ids()[0]).starts_with("\\x"));
        assert_eq!(t.token_text(6342), " Paris");
        assert_eq!(t.token_text(99999), "<99999>");
    }

    #[test]
    fn unknown_id_is_an_error() {
        assert!(tok().decode(&[60000]).is_err());
    }
}
