//! Table-driven lemmatization and part-of-speech lookup.
//!
//! The lexicon is a UTF-8 TSV of `surface<TAB>lemma<TAB>pos` lines; blank
//! lines and lines starting with `#` are ignored. A surface form may carry
//! several parts of speech ("orange" is both a noun and an adjective) but
//! only one lemma per part of speech. The person list names lemmas, one per
//! line, and every one must appear as a lemma in the table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::tensor_io::IoError;

const DEFAULT_LEXICON: &str = include_str!("../../data/lexicon.tsv");
const DEFAULT_PERSON_NOUNS: &str = include_str!("../../data/person_nouns.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pos {
    Noun,
    Adjective,
    Verb,
    Adverb,
    Determiner,
    Preposition,
    Pronoun,
    Numeral,
    Conjunction,
    Other,
}

impl FromStr for Pos {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "noun" => Pos::Noun,
            "adj" | "adjective" => Pos::Adjective,
            "verb" => Pos::Verb,
            "adv" | "adverb" => Pos::Adverb,
            "det" | "determiner" => Pos::Determiner,
            "prep" | "preposition" => Pos::Preposition,
            "pron" | "pronoun" => Pos::Pronoun,
            "num" | "numeral" => Pos::Numeral,
            "conj" | "conjunction" => Pos::Conjunction,
            "other" => Pos::Other,
            _ => return Err(format!("unknown part of speech {s:?}")),
        })
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pos::Noun => "noun",
            Pos::Adjective => "adj",
            Pos::Verb => "verb",
            Pos::Adverb => "adv",
            Pos::Determiner => "det",
            Pos::Preposition => "prep",
            Pos::Pronoun => "pron",
            Pos::Numeral => "num",
            Pos::Conjunction => "conj",
            Pos::Other => "other",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    /// surface → (pos → lemma)
    entries: BTreeMap<String, BTreeMap<Pos, String>>,
    lemmas: BTreeSet<String>,
    person_nouns: BTreeSet<String>,
}

fn is_lower(s: &str) -> bool {
    s.to_lowercase() == s
}

impl Lexicon {
    pub fn parse(lexicon: &str, person_list: &str) -> Result<Self, AnalysisError> {
        let mut entries: BTreeMap<String, BTreeMap<Pos, String>> = BTreeMap::new();
        let mut lemmas = BTreeSet::new();
        for (i, raw) in lexicon.lines().enumerate() {
            let line = i + 1;
            let bad = |reason: String| AnalysisError::LexiconLine { line, reason };
            let text = raw.trim_end_matches('\r');
            if text.trim().is_empty() || text.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = text.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad(format!(
                    "expected surface<TAB>lemma<TAB>pos, found {} field(s)",
                    fields.len()
                )));
            }
            let (surface, lemma) = (fields[0].trim(), fields[1].trim());
            if surface.is_empty() || lemma.is_empty() {
                return Err(bad("empty surface or lemma".into()));
            }
            if !is_lower(surface) || !is_lower(lemma) {
                return Err(bad("entries must be lowercase".into()));
            }
            let pos: Pos = fields[2].trim().parse().map_err(bad)?;
            let slot = entries.entry(surface.to_string()).or_default();
            if slot.insert(pos, lemma.to_string()).is_some() {
                return Err(bad(format!("duplicate entry for ({surface:?}, {pos})")));
            }
            lemmas.insert(lemma.to_string());
        }
        if entries.is_empty() {
            return Err(AnalysisError::EmptyLexicon);
        }
        let mut person_nouns = BTreeSet::new();
        for (i, raw) in person_list.lines().enumerate() {
            let line = i + 1;
            let text = raw.trim();
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            let bad = |reason: String| AnalysisError::PersonLine { line, reason };
            if !is_lower(text) {
                return Err(bad("entries must be lowercase".into()));
            }
            if !lemmas.contains(text) {
                return Err(bad(format!("{text:?} is not a lemma in the lexicon")));
            }
            person_nouns.insert(text.to_string());
        }
        if person_nouns.is_empty() {
            return Err(AnalysisError::EmptyPersonList);
        }
        Ok(Self {
            entries,
            lemmas,
            person_nouns,
        })
    }

    pub fn load(lexicon: impl AsRef<Path>, person_list: impl AsRef<Path>) -> Result<Self, AnalysisError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|source| IoError::Io {
                path: p.to_path_buf(),
                source,
            })
        };
        Self::parse(&read(lexicon.as_ref())?, &read(person_list.as_ref())?)
    }

    /// The bundled English lexicon and person-noun list.
    pub fn default_english() -> Self {
        Self::parse(DEFAULT_LEXICON, DEFAULT_PERSON_NOUNS).expect("bundled lexicon is valid")
    }

    pub fn default_lexicon_text() -> &'static str {
        DEFAULT_LEXICON
    }

    pub fn default_person_text() -> &'static str {
        DEFAULT_PERSON_NOUNS
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lemma(&self, surface: &str, pos: Pos) -> Option<&str> {
        self.entries.get(surface)?.get(&pos).map(String::as_str)
    }

    pub fn contains_surface(&self, surface: &str) -> bool {
        self.entries.contains_key(surface)
    }

    pub fn person_nouns(&self) -> &BTreeSet<String> {
        &self.person_nouns
    }

    pub fn is_person(&self, lemma: &str) -> bool {
        self.person_nouns.contains(lemma)
    }

    /// Lemmas of `pos` in `text`, in token order with repeats.
    ///
    /// Each token is looked up whole; a hyphenated token with no entry of
    /// its own falls back to its hyphen-separated parts. Returns
    /// `(surface, lemma)` pairs.
    pub fn lemmas_in<'a>(&'a self, text: &str, pos: Pos) -> Vec<(String, &'a str)> {
        let mut out = Vec::new();
        for tok in tokenize(text) {
            if let Some(l) = self.lemma(&tok, pos) {
                out.push((tok, l));
            } else if tok.contains('-') && !self.contains_surface(&tok) {
                for part in tok.split('-') {
                    if let Some(l) = self.lemma(part, pos) {
                        out.push((part.to_string(), l));
                    }
                }
            }
        }
        out
    }
}

/// Lowercased maximal runs of letters. A hyphen between two letters joins
/// them into one token, so "close-up" stays whole; every other non-letter
/// character separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphabetic() {
            cur.extend(c.to_lowercase());
        } else if c == '-'
            && !cur.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphabetic())
        {
            cur.push('-');
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}
