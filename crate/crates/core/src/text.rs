//! Tokenization, vocabularies and corpus files.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const SPECIALS: [&str; 3] = ["<unk>", "<bos>", "<eos>"];

/// Lowercases and splits on whitespace; every punctuation character becomes
/// its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
        } else if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            out.push(ch.to_lowercase().collect());
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Vocabulary::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..3] != SPECIALS {
            return Err(Error::schema(
                "vocab",
                "the first three tokens must be <unk>, <bos>, <eos>",
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::schema("vocab", format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Encodes a document for language modelling: its tokens followed by `<eos>`.
    pub fn encode_document(&self, text: &str) -> Vec<u32> {
        let mut ids = self.encode(text);
        ids.push(EOS);
        ids
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Term-frequency counts over the vocabulary.
    pub fn bag_of_words(&self, text: &str) -> Vec<f64> {
        let mut counts = vec![0.0; self.len()];
        for id in self.encode(text) {
            counts[id as usize] += 1.0;
        }
        counts
    }
}

/// Builds a vocabulary of every token seen at least `min_count` times,
/// ordered by descending frequency and then lexicographically.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], min_count: usize) -> Result<Vocabulary> {
    build_vocab_limited(corpus, min_count, None)
}

/// As [`build_vocab`], keeping at most `max_size` entries including the specials.
pub fn build_vocab_limited<S: AsRef<str>>(
    corpus: &[S],
    min_count: usize,
    max_size: Option<usize>,
) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput { what: "corpus" });
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for doc in corpus {
        for tok in tokenize(doc.as_ref()) {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count.max(1))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    let room = max_size.map_or(usize::MAX, |m| m.saturating_sub(SPECIALS.len()));
    tokens.extend(ranked.into_iter().take(room).map(|(t, _)| t));
    Vocabulary::from_tokens(tokens)
}

/// One corpus line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Parses corpus text: one document per line, with an optional leading
/// `<label>\t`. Blank lines are skipped; ids are `<prefix>-<line number>`.
pub fn parse_corpus(content: &str, id_prefix: &str) -> Vec<Document> {
    content
        .lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            let (label, text) = match line.split_once('\t') {
                Some((l, t)) => (Some(l.trim().to_string()), t),
                None => (None, line),
            };
            Document {
                id: format!("{id_prefix}-{:06}", i + 1),
                text: text.trim().to_string(),
                label,
            }
        })
        .collect()
}

pub fn read_corpus(path: &Path, id_prefix: &str) -> Result<Vec<Document>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_corpus(&content, id_prefix))
}

pub fn format_corpus(docs: &[Document]) -> String {
    let mut out = String::new();
    for d in docs {
        if let Some(l) = &d.label {
            out.push_str(l);
            out.push('\t');
        }
        out.push_str(&d.text);
        out.push('\n');
    }
    out
}

/// Sorted distinct labels; a document's class id is its label's position.
pub fn label_set(docs: &[&Document]) -> Result<Vec<String>> {
    let mut labels = Vec::new();
    for d in docs {
        match &d.label {
            Some(l) => labels.push(l.clone()),
            None => {
                return Err(Error::Config(format!(
                    "document {} has no label; classification corpora need `<label>\\t` prefixes",
                    d.id
                )))
            }
        }
    }
    labels.sort();
    labels.dedup();
    Ok(labels)
}
