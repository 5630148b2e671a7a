use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use numkernel::Rng;

use super::EventMention;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Range of the uniform draw for words without a pretrained vector.
pub const OOV_INIT_BOUND: f64 = 0.25;

/// Dense word ids. `0` is padding, `1` is unknown; corpus words follow in
/// (frequency desc, lexicographic) order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Id for `word`, falling back to [`UNK`].
    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

pub fn build_vocab(mentions: &[EventMention], min_count: usize) -> Result<Vocabulary> {
    if mentions.is_empty() {
        return Err(Error::Domain("cannot build a vocabulary from zero mentions".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for m in mentions {
        for t in &m.tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut words = vec!["<pad>".to_string(), "<unk>".to_string()];
    words.extend(kept.into_iter().map(|(w, _)| w.to_string()));
    let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    Ok(Vocabulary { words, index })
}

/// Word vectors aligned to vocabulary ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub values: Vec<f64>,
    pub trainable: bool,
    /// Vocabulary words whose vector came from the file.
    pub from_file: usize,
    /// Lines that repeated a word already seen; the later line wins.
    pub duplicates: usize,
}

impl EmbeddingTable {
    pub fn rows(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.values[id * self.dim..(id + 1) * self.dim]
    }

    /// Every row uniform in `±0.25`.
    pub fn random(vocab: &Vocabulary, dim: usize, rng: &mut Rng) -> Self {
        let values = (0..vocab.len() * dim)
            .map(|_| rng.uniform(-OOV_INIT_BOUND, OOV_INIT_BOUND))
            .collect();
        Self {
            dim,
            values,
            trainable: true,
            from_file: 0,
            duplicates: 0,
        }
    }
}

/// Parses `word v1 .. v_dim` lines. Vocabulary words missing from the file
/// keep a random row.
pub fn parse_embeddings<R: BufRead>(reader: R, vocab: &Vocabulary, dim: usize, rng: &mut Rng) -> Result<EmbeddingTable> {
    if dim == 0 {
        return Err(Error::Domain("embedding dimension must be positive".into()));
    }
    let mut table = EmbeddingTable::random(vocab, dim, rng);
    let mut seen: HashMap<String, ()> = HashMap::new();
    let mut hits = vec![false; vocab.len()];
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else {
            continue;
        };
        let vec: Vec<f64> = parts
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: line_no,
                message: format!("bad number: {e}"),
            })?;
        if vec.len() != dim {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {dim} components, found {}", vec.len()),
            });
        }
        if vec.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: line_no,
                message: "non-finite component".into(),
            });
        }
        if seen.insert(word.to_string(), ()).is_some() {
            table.duplicates += 1;
        }
        if vocab.contains(word) {
            let id = vocab.id(word);
            table.values[id * dim..(id + 1) * dim].copy_from_slice(&vec);
            hits[id] = true;
        }
    }
    table.from_file = hits.iter().filter(|&&h| h).count();
    Ok(table)
}

pub fn load_embeddings(path: impl AsRef<Path>, vocab: &Vocabulary, dim: usize, rng: &mut Rng) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(BufReader::new(file), vocab, dim, rng)
}
