//! Whitespace-and-byte tokenizer over a fixed vocabulary file.
//!
//! The vocabulary is plain text, one token per line, id = line number.
//! Lines 0..3 are `<pad>`, `<bos>`, `<eos>`; lines 3..259 are the byte
//! tokens `<0x00>`..`<0xFF>`; the remainder are whole words. Words found in
//! the vocabulary map to one id; anything else (including every whitespace
//! character) falls back to its UTF-8 bytes, so decoding is lossless.

use std::collections::HashMap;
use std::path::Path;

use super::text::{TextTokens, CONTEXT_LENGTH};
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
const BYTE_BASE: u32 = 3;

const DEFAULT_VOCAB: &str = include_str!("../../assets/vocab.txt");

#[derive(Debug, Clone)]
pub struct TextTokenizer {
    tokens: Vec<String>,
    words: HashMap<String, u32>,
}

impl Default for TextTokenizer {
    fn default() -> Self {
        Self::from_vocab_text(DEFAULT_VOCAB).expect("bundled vocabulary is valid")
    }
}

impl TextTokenizer {
    pub fn from_vocab_text(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        let expect_prefix = ["<pad>", "<bos>", "<eos>"];
        for (i, want) in expect_prefix.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*want) {
                return Err(Error::config(format!("vocabulary line {i} must be {want}")));
            }
        }
        for b in 0..256u32 {
            let want = format!("<0x{b:02X}>");
            if tokens.get((BYTE_BASE + b) as usize) != Some(&want) {
                return Err(Error::config(format!("vocabulary line {} must be {want}", BYTE_BASE + b)));
            }
        }
        let mut words = HashMap::new();
        for (i, tok) in tokens.iter().enumerate().skip((BYTE_BASE + 256) as usize) {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::config(format!("vocabulary line {i} is not a single word")));
            }
            words.insert(tok.clone(), i as u32);
        }
        Ok(Self { tokens, words })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_vocab_text(&text)
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    fn push_bytes(out: &mut Vec<u32>, s: &str) {
        out.extend(s.bytes().map(|b| BYTE_BASE + b as u32));
    }

    /// Content ids without bos/eos.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        let mut word = String::new();
        let flush = |word: &mut String, out: &mut Vec<u32>| {
            if word.is_empty() {
                return;
            }
            match self.words.get(word.as_str()) {
                Some(&id) => out.push(id),
                None => Self::push_bytes(out, word),
            }
            word.clear();
        };
        for ch in text.chars() {
            if ch.is_whitespace() {
                flush(&mut word, &mut out);
                let mut buf = [0u8; 4];
                Self::push_bytes(&mut out, ch.encode_utf8(&mut buf));
            } else {
                word.push(ch);
            }
        }
        flush(&mut word, &mut out);
        out
    }

    /// Fixed-length sequence: bos, up to 75 content ids, eos, padding.
    pub fn tokenize(&self, text: &str) -> TextTokens {
        let mut content = self.encode(text);
        content.truncate(CONTEXT_LENGTH - 2);
        let mut ids = Vec::with_capacity(CONTEXT_LENGTH);
        ids.push(BOS);
        ids.extend(content);
        let eos_position = ids.len();
        ids.push(EOS);
        ids.resize(CONTEXT_LENGTH, PAD);
        TextTokens::new(ids, eos_position).expect("constructed sequence is valid")
    }

    /// Text between bos and eos.
    pub fn detokenize(&self, tokens: &TextTokens) -> String {
        let mut bytes = Vec::new();
        for &id in &tokens.ids()[1..tokens.eos_position()] {
            if (BYTE_BASE..BYTE_BASE + 256).contains(&id) {
                bytes.push((id - BYTE_BASE) as u8);
            } else if let Some(tok) = self.token(id) {
                bytes.extend_from_slice(tok.as_bytes());
            }
        }
        String::from_utf8_lossy(&bytes).into_owned()
    }
}
