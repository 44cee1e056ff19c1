//! Weak and strong text augmentation.
//!
//! Weak augmentation performs random token transpositions. Strong
//! augmentation applies the same swaps, then random deletion (never
//! emptying a nonempty text), then synonym substitution from a
//! [`SynonymLexicon`]. Both operate on the tokenized text and return the
//! tokens joined by single spaces.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub swap_rate: f64,
    pub delete_rate: f64,
    pub synonym_rate: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            swap_rate: 0.1,
            delete_rate: 0.1,
            synonym_rate: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [
            ("swap_rate", self.swap_rate),
            ("delete_rate", self.delete_rate),
            ("synonym_rate", self.synonym_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} = {rate} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Lowercase token → synonyms.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynonymLexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl SynonymLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `word<TAB>syn1,syn2,...` lines. Blank lines and lines starting
    /// with `#` are skipped; self-mappings are dropped, and so is an entry
    /// left with no synonyms.
    pub fn parse(source: &str) -> Result<Self> {
        let mut lex = SynonymLexicon::new();
        for (n, line) in source.lines().enumerate() {
            let line_no = n + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, syns) = line.split_once('\t').ok_or(Error::MalformedLexicon {
                line: line_no,
                reason: "missing TAB separator".into(),
            })?;
            let word = word.trim().to_lowercase();
            if word.is_empty() {
                return Err(Error::MalformedLexicon {
                    line: line_no,
                    reason: "empty headword".into(),
                });
            }
            lex.insert(&word, syns.split(',').map(|s| s.trim().to_lowercase()));
        }
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&raw)
    }

    /// Small lexicon bundled with the crate.
    pub fn bundled() -> Self {
        Self::parse(include_str!("../data/lexicon.tsv")).expect("bundled lexicon parses")
    }

    pub fn insert<I, S>(&mut self, word: &str, synonyms: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let word = word.to_lowercase();
        let entry = self.entries.entry(word.clone()).or_default();
        for s in synonyms {
            let s = s.into().to_lowercase();
            if !s.is_empty() && s != word && !entry.contains(&s) {
                entry.push(s);
            }
        }
        if entry.is_empty() {
            self.entries.remove(&word);
        }
    }

    pub fn get(&self, word: &str) -> Option<&[String]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

/// `⌈swap_rate · n⌉` transpositions of two distinct random positions.
fn swap_tokens<R: Rng + ?Sized>(tokens: &mut [String], swap_rate: f64, rng: &mut R) {
    let n = tokens.len();
    if n < 2 || swap_rate <= 0.0 {
        return;
    }
    let swaps = (swap_rate * n as f64).ceil() as usize;
    for _ in 0..swaps {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        tokens.swap(i, j);
    }
}

pub fn weak_augment<R: Rng + ?Sized>(text: &str, cfg: &AugmentConfig, rng: &mut R) -> String {
    let mut tokens = tokenize(text);
    swap_tokens(&mut tokens, cfg.swap_rate, rng);
    tokens.join(" ")
}

pub fn strong_augment<R: Rng + ?Sized>(
    text: &str,
    lexicon: &SynonymLexicon,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> String {
    let mut tokens = tokenize(text);
    swap_tokens(&mut tokens, cfg.swap_rate, rng);

    if cfg.delete_rate > 0.0 && !tokens.is_empty() {
        let kept: Vec<String> = tokens
            .iter()
            .filter(|_| !rng.gen_bool(cfg.delete_rate))
            .cloned()
            .collect();
        tokens = if kept.is_empty() {
            vec![tokens.choose(rng).expect("nonempty").clone()]
        } else {
            kept
        };
    }

    if cfg.synonym_rate > 0.0 {
        for tok in tokens.iter_mut() {
            if let Some(syns) = lexicon.get(tok) {
                if rng.gen_bool(cfg.synonym_rate) {
                    *tok = syns.choose(rng).expect("entries are nonempty").clone();
                }
            }
        }
    }
    tokens.join(" ")
}
