//! Domain belonging degree: how strongly a word or document belongs to
//! each training domain, from raw per-domain term counts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::text::{preprocess, PipelineConfig};

/// Exact per-domain token counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainStats {
    domains: Vec<String>,
    counts: BTreeMap<String, Vec<u64>>,
    totals: Vec<u64>,
}

/// How word-level values are folded into a document vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WordDbd {
    pub tf: f64,
    pub idf: f64,
    pub dbd: f64,
}

impl WordDbd {
    const ZERO: WordDbd = WordDbd {
        tf: 0.0,
        idf: 0.0,
        dbd: 0.0,
    };
}

/// One value per domain, in the stats' domain order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DbdVector(pub Vec<f64>);

impl DbdVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

impl DomainStats {
    /// Counts pre-tokenized documents. `docs` yields `(domain index, tokens)`.
    pub fn from_tokens<'a, I>(domains: Vec<String>, docs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, &'a [String])>,
    {
        let m = domains.len();
        if m == 0 {
            return Err(Error::Stats("no domains".into()));
        }
        let mut counts: BTreeMap<String, Vec<u64>> = BTreeMap::new();
        let mut totals = vec![0u64; m];
        for (d, tokens) in docs {
            if d >= m {
                return Err(Error::Bounds { index: d, size: m });
            }
            for tok in tokens {
                counts.entry(tok.clone()).or_insert_with(|| vec![0; m])[d] += 1;
                totals[d] += 1;
            }
        }
        if let Some(i) = totals.iter().position(|&n| n == 0) {
            return Err(Error::Stats(format!(
                "domain `{}` has no tokens",
                domains[i]
            )));
        }
        Ok(Self {
            domains,
            counts,
            totals,
        })
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn totals(&self) -> &[u64] {
        &self.totals
    }

    /// `n_{T,i}`, zero for unseen tokens.
    pub fn count(&self, token: &str, domain: usize) -> u64 {
        self.counts.get(token).map_or(0, |c| c[domain])
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }

    /// Multiplies every count by `factor`.
    pub fn scaled(&self, factor: u64) -> Self {
        Self {
            domains: self.domains.clone(),
            counts: self
                .counts
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().map(|c| c * factor).collect()))
                .collect(),
            totals: self.totals.iter().map(|t| t * factor).collect(),
        }
    }
}

pub fn build_domain_stats(train: &Dataset, config: &PipelineConfig) -> Result<DomainStats> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let tokenized: Vec<(usize, Vec<String>)> = train
        .documents()
        .iter()
        .map(|d| {
            let idx = train
                .domain_index(&d.domain)
                .expect("dataset domains are closed");
            (idx, preprocess(&d.text, config))
        })
        .collect();
    DomainStats::from_tokens(
        train.domains().to_vec(),
        tokenized.iter().map(|(d, t)| (*d, t.as_slice())),
    )
}

/// `tf = n_i/N_i`, `idf = n_i/Σ_j n_j`, `dbd = tf·idf`. Unseen tokens and
/// out-of-range domains give zeros.
pub fn word_dbd(token: &str, domain: usize, stats: &DomainStats) -> WordDbd {
    let Some(counts) = stats.counts.get(token) else {
        return WordDbd::ZERO;
    };
    if domain >= counts.len() {
        return WordDbd::ZERO;
    }
    let n = counts[domain] as f64;
    let across: u64 = counts.iter().sum();
    let tf = n / stats.totals[domain] as f64;
    let idf = if across == 0 { 0.0 } else { n / across as f64 };
    WordDbd {
        tf,
        idf,
        dbd: tf * idf,
    }
}

pub fn document_dbd(tokens: &[String], stats: &DomainStats) -> DbdVector {
    document_dbd_with(tokens, stats, Aggregation::Mean)
}

pub fn document_dbd_with(tokens: &[String], stats: &DomainStats, agg: Aggregation) -> DbdVector {
    let m = stats.num_domains();
    let mut acc = vec![0.0; m];
    if tokens.is_empty() {
        return DbdVector(acc);
    }
    for tok in tokens {
        if !stats.counts.contains_key(tok) {
            continue;
        }
        for (i, a) in acc.iter_mut().enumerate() {
            *a += word_dbd(tok, i, stats).dbd;
        }
    }
    if agg == Aggregation::Mean {
        let n = tokens.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    DbdVector(acc)
}

/// Index of the largest entry; the first one wins ties. `None` when empty.
pub fn identify_domain(d: &DbdVector) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in d.0.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}
