//! Tokenization, vocabulary, zero padding and embedding lookup.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;
use wcaps_autodiff::Tensor;

use crate::corpus::Dataset;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const OOV: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const OOV_TOKEN: &str = "<unk>";

/// Range for seeded initialization of rows without a pretrained vector.
pub const INIT_RANGE: f64 = 0.25;

/// How the padded sequence length is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxLen {
    /// Longest preprocessed document in the corpus.
    Auto,
    /// Corpus maximum, but never more than this.
    Cap(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub stopwords: BTreeSet<String>,
    pub min_count: usize,
    pub max_len: MaxLen,
    pub embed_dim: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stopwords: BTreeSet::new(),
            min_count: 2,
            max_len: MaxLen::Auto,
            embed_dim: 32,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_count < 1 {
            return Err(Error::Pipeline("min_count must be at least 1".into()));
        }
        if matches!(self.max_len, MaxLen::Cap(0)) {
            return Err(Error::Pipeline("max_len must be at least 1".into()));
        }
        if self.embed_dim == 0 {
            return Err(Error::Pipeline("embed_dim must be at least 1".into()));
        }
        Ok(())
    }

    /// Adds stopwords, normalized the same way as document tokens.
    pub fn with_stopwords<I, S>(mut self, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.stopwords.extend(
            words
                .into_iter()
                .map(|w| normalize(w.as_ref()))
                .filter(|w| !w.is_empty()),
        );
        self
    }

    /// Resolves the sequence length for a corpus of tokenized documents.
    pub fn resolve_max_len<'a>(&self, docs: impl IntoIterator<Item = &'a [String]>) -> usize {
        let longest = docs
            .into_iter()
            .map(<[String]>::len)
            .max()
            .unwrap_or(0)
            .max(1);
        match self.max_len {
            MaxLen::Auto => longest,
            MaxLen::Cap(cap) => longest.min(cap),
        }
    }
}

/// One stopword per line; blank lines are skipped.
pub fn load_stopwords(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let content = fs::read_to_string(path)?;
    Ok(content
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

fn normalize(text: &str) -> String {
    text.nfkc().collect::<String>().to_lowercase()
}

fn edge_punct() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[\p{P}\p{S}]+|[\p{P}\p{S}]+$").expect("valid pattern"))
}

/// NFKC + lowercase, whitespace split, punctuation stripped from token
/// edges, punctuation-only tokens and stopwords dropped. Order is kept.
pub fn preprocess(text: &str, config: &PipelineConfig) -> Vec<String> {
    let normalized = normalize(text);
    normalized
        .split_whitespace()
        .map(|t| edge_punct().replace_all(t, "").into_owned())
        .filter(|t| !t.is_empty() && !config.stopwords.contains(t))
        .collect()
}

/// Token ↔ index map with PAD at 0 and OOV at 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Builds from content tokens already in index order (starting at 2).
    pub fn from_content_tokens(content: impl IntoIterator<Item = String>) -> Self {
        let mut tokens = vec![PAD_TOKEN.to_owned(), OOV_TOKEN.to_owned()];
        tokens.extend(content);
        tokens.into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied().filter(|&i| i >= 2)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    /// Content tokens in index order.
    pub fn content_tokens(&self) -> &[String] {
        &self.tokens[2..]
    }
}

/// Vocabulary of every token whose corpus count reaches `min_count`,
/// ordered by descending count with ties broken lexicographically.
pub fn build_vocabulary(corpus: &Dataset, config: &PipelineConfig) -> Result<Vocabulary> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let tokenized: Vec<Vec<String>> = corpus
        .documents()
        .iter()
        .map(|d| preprocess(&d.text, config))
        .collect();
    vocabulary_from_tokens(tokenized.iter().map(Vec::as_slice), config.min_count)
}

pub fn vocabulary_from_tokens<'a>(
    docs: impl IntoIterator<Item = &'a [String]>,
    min_count: usize,
) -> Result<Vocabulary> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for doc in docs {
        for t in doc {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .collect();
    if kept.is_empty() {
        return Err(Error::Pipeline(format!(
            "no token occurs at least {min_count} times"
        )));
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(Vocabulary::from_content_tokens(
        kept.into_iter().map(|(t, _)| t.to_owned()),
    ))
}

/// Maps tokens to indices (unknown → OOV), truncates to `max_len`, and
/// right-pads with PAD.
pub fn encode_pad(tokens: &[String], vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    let mut out: Vec<usize> = tokens
        .iter()
        .take(max_len)
        .map(|t| vocab.get(t).unwrap_or(OOV))
        .collect();
    out.resize(max_len, PAD);
    out
}

/// `V × E` embedding matrix whose PAD row is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    matrix: Tensor,
}

impl EmbeddingTable {
    /// Seeded uniform rows in `[-INIT_RANGE, INIT_RANGE]`, PAD row zero.
    pub fn random(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = vec![0.0; vocab_size * dim];
        for v in data.iter_mut().skip(dim) {
            *v = rng.gen_range(-INIT_RANGE..=INIT_RANGE);
        }
        Self {
            matrix: Tensor::new(vec![vocab_size, dim], data).expect("finite by construction"),
        }
    }

    pub fn from_matrix(matrix: Tensor) -> Result<Self> {
        if matrix.rank() != 2 || matrix.shape()[0] < 1 {
            return Err(Error::contract("embedding matrix must be V × E with V ≥ 1"));
        }
        if matrix.row(PAD).iter().any(|&v| v != 0.0) {
            return Err(Error::contract("PAD row must be zero"));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn row(&self, index: usize) -> &[f64] {
        self.matrix.row(index)
    }
}

/// Reads a textual word-vector file (`<count> <dim>` header, then
/// `token v1 … vdim` per line). Vocabulary rows found in the file copy its
/// vector; the rest keep their seeded random initialization.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    config: &PipelineConfig,
    seed: u64,
) -> Result<EmbeddingTable> {
    let content = fs::read_to_string(path)?;
    parse_embeddings(&content, vocab, config, seed)
}

pub fn parse_embeddings(
    content: &str,
    vocab: &Vocabulary,
    config: &PipelineConfig,
    seed: u64,
) -> Result<EmbeddingTable> {
    let mut lines = content.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing header".into(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let dim = match fields.as_slice() {
        [count, dim] => match (count.parse::<usize>(), dim.parse::<usize>()) {
            (Ok(_), Ok(dim)) => dim,
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("bad header `{header}`"),
                })
            }
        },
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("header must be `<count> <dim>`, got `{header}`"),
            })
        }
    };
    if dim != config.embed_dim {
        return Err(Error::Dimension {
            expected: config.embed_dim,
            found: dim,
        });
    }
    let mut table = EmbeddingTable::random(vocab.len(), dim, seed);
    let mut filled = vec![false; vocab.len()];
    for (i, raw) in lines {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut parts = raw.split_whitespace();
        let token = parts.next().expect("non-blank line");
        let values: Vec<f64> = parts
            .map(|p| p.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
        if values.len() != dim || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line,
                message: format!("expected {dim} finite values, got {}", values.len()),
            });
        }
        if let Some(idx) = vocab.get(&normalize(token)) {
            if !filled[idx] {
                filled[idx] = true;
                table.matrix.data_mut()[idx * dim..(idx + 1) * dim].copy_from_slice(&values);
            }
        }
    }
    Ok(table)
}

/// Gathers table rows for each index into an `M × E` matrix.
pub fn embed(indices: &[usize], table: &EmbeddingTable) -> Result<Tensor> {
    let dim = table.dim();
    let size = table.vocab_size();
    let mut data = Vec::with_capacity(indices.len() * dim);
    for &i in indices {
        if i >= size {
            return Err(Error::Bounds { index: i, size });
        }
        data.extend_from_slice(table.row(i));
    }
    Ok(Tensor::new(vec![indices.len(), dim], data)?)
}
