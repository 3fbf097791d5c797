use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::document::Document;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Closed token vocabulary; id 0 is padding, id 1 is unknown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Sorted set of all tokens in `docs`, after the two reserved entries.
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Self {
        let mut set = BTreeSet::new();
        for d in docs {
            for (_, t) in d.tokens() {
                set.insert(t.to_string());
            }
        }
        let mut tokens = vec!["[PAD]".to_string(), "[UNK]".to_string()];
        tokens.extend(set);
        Self::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}
