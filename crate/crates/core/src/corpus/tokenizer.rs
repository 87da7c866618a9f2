use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{Dialogue, Ontology};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

/// Lowercases and splits on whitespace; every punctuation character becomes
/// its own token.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            cur.push(ch);
            continue;
        }
        if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Token ids with their segment (0 = `[CLS] A [SEP]`, 1 = `U [SEP]`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub segments: Vec<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Word vocabulary. Ids 0..4 are `[PAD]`, `[UNK]`, `[CLS]`, `[SEP]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;
    pub const CLS_ID: usize = 2;
    pub const SEP_ID: usize = 3;

    /// Reserved tokens followed by `words` in sorted order.
    pub fn new<I: IntoIterator<Item = String>>(words: I) -> Self {
        let reserved = [PAD, UNK, CLS, SEP].map(String::from);
        let rest: BTreeSet<String> = words.into_iter().filter(|w| !reserved.contains(w)).collect();
        Vec::from_iter(reserved.into_iter().chain(rest)).into()
    }

    /// Every word of every utterance plus slot names and values.
    pub fn build(ontology: &Ontology, dialogues: &[Dialogue]) -> Self {
        let mut words = Vec::new();
        for (slot, values) in ontology.as_map() {
            words.extend(split_words(slot));
            for v in values {
                words.extend(split_words(v));
            }
        }
        for d in dialogues {
            for t in &d.turns {
                words.extend(split_words(&t.system));
                words.extend(split_words(&t.user));
            }
        }
        Self::new(words)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// `[CLS] system [SEP] user [SEP]`, at most `max_len` ids. When too long,
    /// tokens are dropped from the end of whichever utterance is longer.
    pub fn tokenize_turn(&self, system: &str, user: &str, max_len: usize) -> TokenSequence {
        let mut a: Vec<usize> = split_words(system).iter().map(|w| self.id(w)).collect();
        let mut u: Vec<usize> = split_words(user).iter().map(|w| self.id(w)).collect();
        let budget = max_len.saturating_sub(3);
        while a.len() + u.len() > budget {
            if a.len() > u.len() {
                a.pop();
            } else {
                u.pop();
            }
        }
        let mut ids = Vec::with_capacity(a.len() + u.len() + 3);
        ids.push(Self::CLS_ID);
        ids.extend(&a);
        ids.push(Self::SEP_ID);
        let first = ids.len();
        ids.extend(&u);
        ids.push(Self::SEP_ID);
        let segments = (0..ids.len()).map(|i| usize::from(i >= first)).collect();
        TokenSequence { ids, segments }
    }

    /// `[CLS] text [SEP]`, truncating the text to fit `max_len`.
    pub fn tokenize_text(&self, text: &str, max_len: usize) -> TokenSequence {
        let mut ids = vec![Self::CLS_ID];
        ids.extend(
            split_words(text)
                .iter()
                .map(|w| self.id(w))
                .take(max_len.saturating_sub(2)),
        );
        ids.push(Self::SEP_ID);
        let segments = vec![0; ids.len()];
        TokenSequence { ids, segments }
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}
