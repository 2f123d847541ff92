//! Labeled datasets: loading, stratified splitting and synthetic corpora.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary sentiment label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub const ALL: [Polarity; 2] = [Polarity::Positive, Polarity::Negative];

    /// Output position in a two-class head: positive first.
    pub fn class_index(self) -> usize {
        match self {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
        }
    }

    pub fn from_class_index(index: usize) -> Option<Self> {
        match index {
            0 => Some(Polarity::Positive),
            1 => Some(Polarity::Negative),
            _ => None,
        }
    }

    pub fn other(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Polarity::Positive => "pos",
            Polarity::Negative => "neg",
        }
    }

    /// Review-score labeling: 4 or more is positive, 2 or less negative,
    /// and a middle score carries no binary label.
    pub fn from_score(score: u8) -> Option<Self> {
        match score {
            s if s >= 4 => Some(Polarity::Positive),
            s if s <= 2 => Some(Polarity::Negative),
            _ => None,
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        })
    }
}

impl FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "positive" | "pos" | "1" => Ok(Polarity::Positive),
            "negative" | "neg" | "0" => Ok(Polarity::Negative),
            other => Err(other.to_owned()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDocument {
    pub text: String,
    pub polarity: Polarity,
    pub domain: String,
}

/// Documents plus the ordered domain list. Domain position is the domain id
/// used by every per-domain vector downstream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    documents: Vec<LabeledDocument>,
    domains: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    text: String,
    polarity: String,
    domain: String,
}

impl Dataset {
    /// Domains are taken in order of first appearance.
    pub fn new(documents: Vec<LabeledDocument>) -> Result<Self> {
        let mut domains: Vec<String> = Vec::new();
        for doc in &documents {
            if !domains.contains(&doc.domain) {
                domains.push(doc.domain.clone());
            }
        }
        Self::with_domains(domains, documents)
    }

    /// Uses an explicit domain order; every document's domain must be listed.
    pub fn with_domains(domains: Vec<String>, documents: Vec<LabeledDocument>) -> Result<Self> {
        let mut seen = HashSet::new();
        for d in &domains {
            if !seen.insert(d.as_str()) {
                return Err(Error::contract(format!("duplicate domain `{d}`")));
            }
        }
        for (i, doc) in documents.iter().enumerate() {
            if doc.text.trim().is_empty() {
                return Err(Error::contract(format!("document {i} has empty text")));
            }
            if !seen.contains(doc.domain.as_str()) {
                return Err(Error::contract(format!(
                    "document {i} has undeclared domain `{}`",
                    doc.domain
                )));
            }
        }
        Ok(Self { documents, domains })
    }

    pub fn documents(&self) -> &[LabeledDocument] {
        &self.documents
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn domain_index(&self, name: &str) -> Option<usize> {
        self.domains.iter().position(|d| d == name)
    }

    /// Documents at `indices`, keeping the full domain list.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            documents: indices.iter().map(|&i| self.documents[i].clone()).collect(),
            domains: self.domains.clone(),
        }
    }

    pub fn count(&self, domain: &str, polarity: Polarity) -> usize {
        self.documents
            .iter()
            .filter(|d| d.domain == domain && d.polarity == polarity)
            .count()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for doc in &self.documents {
            let rec = Record {
                text: doc.text.clone(),
                polarity: doc.polarity.short().to_owned(),
                domain: doc.domain.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("plain strings serialize"));
            out.push('\n');
        }
        out
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Jsonl,
    Csv,
}

impl DataFormat {
    /// Guesses from the file extension; anything but `.csv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Jsonl,
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat) -> Result<Dataset> {
    let content = fs::read_to_string(path)?;
    match format {
        DataFormat::Jsonl => parse_jsonl(&content),
        DataFormat::Csv => parse_csv(&content),
    }
}

fn to_document(rec: Record, line: usize) -> Result<LabeledDocument> {
    let polarity = rec
        .polarity
        .parse::<Polarity>()
        .map_err(|label| Error::Label { line, label })?;
    if rec.text.trim().is_empty() {
        return Err(Error::Parse {
            line,
            message: "text is empty".into(),
        });
    }
    if rec.domain.trim().is_empty() {
        return Err(Error::Parse {
            line,
            message: "domain is empty".into(),
        });
    }
    Ok(LabeledDocument {
        text: rec.text,
        polarity,
        domain: rec.domain,
    })
}

pub fn parse_jsonl(content: &str) -> Result<Dataset> {
    let mut docs = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        docs.push(to_document(rec, line)?);
    }
    if docs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(docs)
}

/// CSV with a mandatory `text,polarity,domain` header.
pub fn parse_csv(content: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(content.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    for field in ["text", "polarity", "domain"] {
        if !headers.iter().any(|h| h.trim() == field) {
            return Err(Error::Parse {
                line: 1,
                message: format!("header is missing `{field}`"),
            });
        }
    }
    let mut docs = Vec::new();
    let mut row = csv::StringRecord::new();
    loop {
        let bad = |e: csv::Error| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        };
        if !reader.read_record(&mut row).map_err(bad)? {
            break;
        }
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let rec: Record = row.deserialize(Some(&headers)).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        docs.push(to_document(rec, line)?);
    }
    if docs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(docs)
}

/// Stratified split over (domain, polarity) cells. Each cell sends
/// `round(test_fraction · n)` documents to the test side, clamped so both
/// sides keep at least one. Document order inside each side is preserved.
pub fn split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::contract(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut cells: BTreeMap<(usize, Polarity), Vec<usize>> = BTreeMap::new();
    for (i, doc) in data.documents.iter().enumerate() {
        let d = data
            .domain_index(&doc.domain)
            .expect("validated on construction");
        cells.entry((d, doc.polarity)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_idx = Vec::new();
    for ((d, pol), mut members) in cells {
        let n = members.len();
        if n < 2 {
            return Err(Error::Stratification(format!(
                "domain `{}` has {n} {pol} document(s); need at least 2",
                data.domains[d]
            )));
        }
        members.shuffle(&mut rng);
        let k = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
        test_idx.extend_from_slice(&members[..k]);
    }
    test_idx.sort_unstable();
    let test_set: HashSet<usize> = test_idx.iter().copied().collect();
    let train_idx: Vec<usize> = (0..data.len()).filter(|i| !test_set.contains(i)).collect();
    Ok((data.subset(&train_idx), data.subset(&test_idx)))
}

/// Parameters of a generated multi-domain corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_domains: usize,
    pub docs_per_domain: usize,
    pub domain_vocab_size: usize,
    pub sentiment_lexicon_size: usize,
    /// Fraction of each domain's vocabulary drawn from a pool shared by all domains.
    pub vocab_overlap: f64,
    /// Positive-to-negative document count ratio within each domain.
    pub imbalance_ratio: f64,
    pub doc_length_range: (usize, usize),
    /// Range of the share of each document's tokens that are sentiment words.
    pub sentiment_share: (f64, f64),
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_domains: 10,
            docs_per_domain: 40,
            domain_vocab_size: 30,
            sentiment_lexicon_size: 8,
            vocab_overlap: 0.0,
            imbalance_ratio: 1.0,
            doc_length_range: (8, 16),
            sentiment_share: (0.3, 0.5),
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    /// (positive, negative) documents per domain.
    pub fn class_counts(&self) -> (usize, usize) {
        let n = self.docs_per_domain as f64;
        let r = self.imbalance_ratio;
        let pos = (n * r / (1.0 + r)).round() as usize;
        let pos = pos.min(self.docs_per_domain);
        (pos, self.docs_per_domain - pos)
    }

    fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Spec(m.to_owned()));
        if self.num_domains == 0 || self.docs_per_domain == 0 || self.domain_vocab_size == 0 {
            return fail("counts must be at least 1");
        }
        if self.sentiment_lexicon_size < 2 {
            return fail("sentiment_lexicon_size must be at least 2 (one word per sign)");
        }
        if !(0.0..=1.0).contains(&self.vocab_overlap) {
            return fail("vocab_overlap must lie in [0, 1]");
        }
        if !(self.imbalance_ratio.is_finite() && self.imbalance_ratio > 0.0) {
            return fail("imbalance_ratio must be a positive number");
        }
        let (lo, hi) = self.doc_length_range;
        if lo < 3 || hi < lo {
            return fail("doc_length_range needs 3 <= min <= max");
        }
        let (a, b) = self.sentiment_share;
        if !(0.0 <= a && a <= b && b <= 1.0) {
            return fail("sentiment_share needs 0 <= low <= high <= 1");
        }
        Ok(())
    }
}

/// The word lists a synthetic corpus was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVocab {
    pub domain_words: Vec<Vec<String>>,
    pub positive_words: Vec<String>,
    pub negative_words: Vec<String>,
}

impl SyntheticVocab {
    pub fn sentiment_of(&self, token: &str) -> Option<Polarity> {
        if self.positive_words.iter().any(|w| w == token) {
            Some(Polarity::Positive)
        } else if self.negative_words.iter().any(|w| w == token) {
            Some(Polarity::Negative)
        } else {
            None
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    generate_synthetic_with_vocab(spec).map(|(d, _)| d)
}

/// Generates a corpus whose documents mix domain words with sentiment words.
/// Each document carries a review score chosen to agree with the majority
/// sentiment sign among its words; the label is derived from that score.
pub fn generate_synthetic_with_vocab(spec: &SyntheticSpec) -> Result<(Dataset, SyntheticVocab)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let n_pos_words = spec.sentiment_lexicon_size.div_ceil(2);
    let positive_words: Vec<String> = (0..n_pos_words).map(|k| format!("pos{k:02}")).collect();
    let negative_words: Vec<String> = (0..spec.sentiment_lexicon_size - n_pos_words)
        .map(|k| format!("neg{k:02}"))
        .collect();

    let shared_pool: Vec<String> = (0..spec.domain_vocab_size)
        .map(|k| format!("common{k:03}"))
        .collect();
    let n_shared = (spec.vocab_overlap * spec.domain_vocab_size as f64).round() as usize;
    let mut domain_words = Vec::with_capacity(spec.num_domains);
    for d in 0..spec.num_domains {
        let mut words: Vec<String> = shared_pool
            .choose_multiple(&mut rng, n_shared)
            .cloned()
            .collect();
        words.extend((n_shared..spec.domain_vocab_size).map(|k| format!("d{d:02}w{k:03}")));
        words.sort();
        domain_words.push(words);
    }

    let domains: Vec<String> = (0..spec.num_domains)
        .map(|d| format!("domain{d:02}"))
        .collect();
    let (n_pos, n_neg) = spec.class_counts();
    let mut documents = Vec::with_capacity(spec.num_domains * spec.docs_per_domain);
    for (d, name) in domains.iter().enumerate() {
        let mut signs: Vec<Polarity> = std::iter::repeat_n(Polarity::Positive, n_pos)
            .chain(std::iter::repeat_n(Polarity::Negative, n_neg))
            .collect();
        signs.shuffle(&mut rng);
        for sign in signs {
            let (lo, hi) = spec.doc_length_range;
            let len = rng.gen_range(lo..=hi);
            let (share_lo, share_hi) = spec.sentiment_share;
            let lo_sent = ((share_lo * len as f64).ceil() as usize).clamp(1, len);
            let hi_sent = ((share_hi * len as f64).floor() as usize).clamp(lo_sent, len);
            let n_sent = rng.gen_range(lo_sent..=hi_sent);
            let n_against = rng.gen_range(0..=(n_sent - 1) / 4);
            let (with_words, against_words) = match sign {
                Polarity::Positive => (&positive_words, &negative_words),
                Polarity::Negative => (&negative_words, &positive_words),
            };
            let mut tokens: Vec<&str> = Vec::with_capacity(len);
            for _ in 0..n_sent - n_against {
                tokens.push(with_words.choose(&mut rng).expect("non-empty"));
            }
            for _ in 0..n_against {
                tokens.push(against_words.choose(&mut rng).expect("non-empty"));
            }
            for _ in n_sent..len {
                tokens.push(domain_words[d].choose(&mut rng).expect("non-empty"));
            }
            tokens.shuffle(&mut rng);
            let score = match sign {
                Polarity::Positive => rng.gen_range(4..=5),
                Polarity::Negative => rng.gen_range(1..=2),
            };
            documents.push(LabeledDocument {
                text: tokens.join(" "),
                polarity: Polarity::from_score(score).expect("score is never 3"),
                domain: name.clone(),
            });
        }
    }
    let dataset = Dataset::with_domains(domains, documents)?;
    Ok((
        dataset,
        SyntheticVocab {
            domain_words,
            positive_words,
            negative_words,
        },
    ))
}
