//! Fixed micro-vocabulary for the synthetic arithmetic world.
//!
//! Tokens cover digits, the three operators, the words used by queries,
//! challenges and assertions, the step words, the answer marker and the step
//! delimiter. There is no tokenizer for free-form text: every sequence in the
//! system is built from these ids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into the fixed vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(pub u16);

pub const VOCAB_SIZE: usize = 27;

pub const PLUS: Token = Token(10);
pub const MINUS: Token = Token(11);
pub const TIMES: Token = Token(12);
pub const WHAT: Token = Token(13);
pub const IS: Token = Token(14);
pub const QMARK: Token = Token(15);
pub const I: Token = Token(16);
pub const BELIEVE: Token = Token(17);
pub const THINK: Token = Token(18);
pub const SURE: Token = Token(19);
pub const DOUBT: Token = Token(20);
pub const AGREE: Token = Token(21);
pub const RECHECK: Token = Token(22);
pub const COMPUTE: Token = Token(23);
pub const LETS: Token = Token(24);
pub const ANSWER: Token = Token(25);
pub const SEP: Token = Token(26);

impl Token {
    pub fn digit(d: u8) -> Token {
        debug_assert!(d < 10);
        Token(d as u16)
    }

    pub fn is_digit(self) -> bool {
        self.0 < 10
    }

    pub fn is_valid(self) -> bool {
        (self.0 as usize) < VOCAB_SIZE
    }

    pub fn text(self) -> &'static str {
        match self.0 {
            0 => "0",
            1 => "1",
            2 => "2",
            3 => "3",
            4 => "4",
            5 => "5",
            6 => "6",
            7 => "7",
            8 => "8",
            9 => "9",
            10 => "+",
            11 => "-",
            12 => "*",
            13 => "what",
            14 => "is",
            15 => "?",
            16 => "i",
            17 => "believe",
            18 => "think",
            19 => "sure",
            20 => "doubt",
            21 => "agree",
            22 => "recheck",
            23 => "compute",
            24 => "lets",
            25 => "ANSWER:",
            26 => ";",
            _ => "<invalid>",
        }
    }
}

/// Renders a signed integer as its digit tokens, with a leading MINUS for
/// negative values.
pub fn number_tokens(value: i64) -> Vec<Token> {
    let mut out = Vec::new();
    if value < 0 {
        out.push(MINUS);
    }
    let digits = value.unsigned_abs().to_string();
    for ch in digits.bytes() {
        out.push(Token::digit(ch - b'0'));
    }
    out
}

/// Parses a decimal string produced by canonicalization back into tokens.
/// Returns a validation error for anything that is not an optionally signed
/// run of digits.
pub fn tokens_for_number_str(s: &str) -> Result<Vec<Token>> {
    let value: i64 = s
        .parse()
        .map_err(|_| Error::validation(format!("not a decimal number: {s:?}")))?;
    Ok(number_tokens(value))
}

/// Detokenizes a sequence. Digits glue to a preceding digit or minus sign so
/// numbers render as single words; everything else is space-separated.
pub fn detokenize(tokens: &[Token]) -> String {
    let mut out = String::new();
    let mut prev: Option<Token> = None;
    for &tok in tokens {
        let glue = tok.is_digit() && prev.is_some_and(|p| p.is_digit() || p == MINUS);
        if !out.is_empty() && !glue {
            out.push(' ');
        }
        out.push_str(tok.text());
        prev = Some(tok);
    }
    out
}

/// Lowercases (ASCII only), collapses whitespace runs to single spaces and
/// strips the ends. Idempotent.
pub fn canonicalize(s: &str) -> String {
    let lowered = s.to_ascii_lowercase();
    let mut out = String::with_capacity(lowered.len());
    let mut in_space = true;
    for ch in lowered.chars() {
        if ch.is_whitespace() {
            if !in_space {
                out.push(' ');
                in_space = true;
            }
        } else {
            out.push(ch);
            in_space = false;
        }
    }
    while out.ends_with(' ') {
        out.pop();
    }
    out
}

/// Extracted answer text with its canonical form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerKey {
    pub raw: String,
    pub canonical: String,
}

impl AnswerKey {
    pub fn from_raw(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let canonical = canonicalize(&raw);
        AnswerKey { raw, canonical }
    }

    pub fn empty() -> Self {
        AnswerKey {
            raw: String::new(),
            canonical: String::new(),
        }
    }
}

/// Finds the text after the last answer marker, up to the step delimiter.
/// Returns `None` when no marker is present.
pub fn extract_answer(tokens: &[Token]) -> Option<AnswerKey> {
    let marker = tokens.iter().rposition(|&t| t == ANSWER)?;
    let tail: Vec<Token> = tokens[marker + 1..]
        .iter()
        .copied()
        .take_while(|&t| t != SEP)
        .collect();
    Some(AnswerKey::from_raw(detokenize(&tail)))
}
