//! Word-level vocabulary for the agent text lane.
//!
//! Agents supply their own id→string mapping; the harness only needs it to
//! turn the text lane back into a transcript. The on-disk form is one
//! `id<TAB>token` pair per line.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Ids at or above this value are reserved (delimiters).
pub const TEXT_VOCAB_SIZE: u32 = 32_000;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    by_id: BTreeMap<u32, String>,
    by_token: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn insert(&mut self, id: u32, token: impl Into<String>) -> Result<()> {
        let token = token.into();
        if id >= TEXT_VOCAB_SIZE {
            return Err(Error::invalid(format!(
                "text id {id} is in the reserved range"
            )));
        }
        if let Some(old) = self.by_id.insert(id, token.clone()) {
            self.by_token.remove(&old);
        }
        self.by_token.insert(token, id);
        Ok(())
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.by_token.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.by_id.get(&id).map(String::as_str)
    }

    /// Splits on whitespace, assigning fresh ids to unseen words.
    pub fn tokenize_growing(&mut self, text: &str) -> Result<Vec<u32>> {
        text.split_whitespace()
            .map(|w| match self.id(w) {
                Some(id) => Ok(id),
                None => {
                    let id = self.by_id.keys().next_back().map_or(0, |&m| m + 1);
                    self.insert(id, w)?;
                    Ok(id)
                }
            })
            .collect()
    }

    /// Splits on whitespace; unknown words are an error.
    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        text.split_whitespace()
            .map(|w| {
                self.id(w)
                    .ok_or_else(|| Error::invalid(format!("word `{w}` is not in the vocabulary")))
            })
            .collect()
    }

    /// Joins known tokens with single spaces; unknown ids render as `<unk:ID>`.
    pub fn detokenize(&self, ids: impl IntoIterator<Item = u32>) -> String {
        let mut out = String::new();
        for id in ids {
            if !out.is_empty() {
                out.push(' ');
            }
            match self.token(id) {
                Some(t) => out.push_str(t),
                None => {
                    let _ = write!(out, "<unk:{id}>");
                }
            }
        }
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (id, tok) in &self.by_id {
            let _ = writeln!(out, "{id}\t{tok}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut v = Vocabulary::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, tok) = line.split_once('\t').ok_or_else(|| {
                Error::invalid(format!(
                    "vocabulary line {}: expected `id<TAB>token`",
                    lineno + 1
                ))
            })?;
            let id: u32 = id.trim().parse().map_err(|_| {
                Error::invalid(format!("vocabulary line {}: bad id `{id}`", lineno + 1))
            })?;
            v.insert(id, tok)?;
        }
        Ok(v)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }
}
