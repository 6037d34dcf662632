//! Word-level tokenizer: lowercase, split on whitespace and punctuation, one
//! token per digit.
//!
//! Normalization: `detokenize(tokenize(s))` is the lowercase token sequence of
//! `s` joined by single spaces, with specials other than `<unk>` dropped.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::LmError;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Splits text into normalized pieces.
pub fn pieces(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_alphabetic() {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Tokenizer {
    /// Vocabulary of every piece seen at least `min_freq` times, plus the
    /// specials and the ten digits. Ids after the specials follow lexical order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for p in pieces(t) {
                *counts.entry(p).or_default() += 1;
            }
        }
        for d in '0'..='9' {
            counts.entry(d.to_string()).or_insert(usize::MAX);
        }
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(counts.into_iter().filter(|(_, n)| *n >= min_freq).map(|(t, _)| t));
        Self::from_tokens(tokens).expect("built vocab is valid")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, LmError> {
        if tokens.len() <= SPECIALS.len() {
            return Err(LmError::EmptyVocab);
        }
        if tokens[..SPECIALS.len()].iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(LmError::Vocab("first four tokens must be the specials".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(LmError::Vocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= SPECIALS.len()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>, LmError> {
        if self.is_empty() {
            return Err(LmError::EmptyVocab);
        }
        Ok(pieces(text).iter().map(|p| self.id(p).unwrap_or(UNK)).collect())
    }

    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| !matches!(id, PAD | BOS | EOS))
            .map(|&id| self.token(id).unwrap_or(SPECIALS[UNK as usize]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<(), LmError> {
        let mut body = self.tokens.join("\n");
        body.push('\n');
        std::fs::write(path, body).map_err(|e| LmError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, LmError> {
        let body = std::fs::read_to_string(path).map_err(|e| LmError::io(path, e))?;
        Self::from_tokens(body.lines().map(str::to_string).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::promptgen::INSTRUCTION;

    #[test]
    fn digits_split_and_lowercase() {
        let tok = Tokenizer::build(["Age is 60"], 1);
        let ids = tok.tokenize("Age is 60").unwrap();
        let names: Vec<&str> = ids.iter().map(|&i| tok.token(i).unwrap()).collect();
        assert_eq!(names, ["age", "is", "6", "0"]);
        assert_eq!(tok.detokenize(&ids), "age is 6 0");
        assert_eq!(tok.tokenize("").unwrap(), Vec::<u32>::new());
    }

    #[test]
    fn units_and_punctuation() {
        assert_eq!(pieces("24.5 kg/m², (BMI)"), ["2", "4", ".", "5", "kg", "/", "m", "²", ",", "(", "bmi", ")"]);
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let tok = Tokenizer::build(["yes no"], 1);
        assert_eq!(tok.tokenize("maybe").unwrap(), vec![UNK]);
        assert_eq!(tok.detokenize(&[UNK]), "<unk>");
    }

    #[test]
    fn corpus_vocab_covers_instruction() {
        let tok = Tokenizer::build([INSTRUCTION, "Age is 60"], 1);
        assert!(!tok.tokenize(INSTRUCTION).unwrap().contains(&UNK));
    }

    #[test]
    fn frequency_cutoff() {
        let tok = Tokenizer::build(["a a b"], 2);
        assert!(tok.id("a").is_some());
        assert!(tok.id("b").is_none());
    }

    #[test]
    fn empty_vocab_is_an_error() {
        assert!(matches!(Tokenizer::from_tokens(SPECIALS.iter().map(|s| s.to_string()).collect()), Err(LmError::EmptyVocab)));
    }

    #[test]
    fn vocab_file_round_trip() {
        let tok = Tokenizer::build([INSTRUCTION], 1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        tok.save(&p).unwrap();
        assert_eq!(Tokenizer::load(&p).unwrap(), tok);
    }

    proptest! {
        #[test]
        fn retokenizing_the_normal_form_is_stable(s in "[A-Za-z0-9 ,./()²-]{0,60}") {
            let tok = Tokenizer::build([s.as_str()], 1);
            let ids = tok.tokenize(&s).unwrap();
            let normal = tok.detokenize(&ids);
            prop_assert_eq!(tok.tokenize(&normal).unwrap(), ids);
            prop_assert_eq!(normal, pieces(&s).join(" "));
        }
    }
}
