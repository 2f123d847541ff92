//! One classifier per domain, blended by domain belonging degree.

mod eval;
mod persist;
mod train;

use serde::{Deserialize, Serialize};
use wcaps_autodiff::Tensor;

use crate::corpus::Polarity;
use crate::dbd::{document_dbd_with, identify_domain, Aggregation, DbdVector, DomainStats};
use crate::error::{Error, Result};
use crate::layers::{NetworkArch, NetworkParams};
use crate::text::{embed, encode_pad, preprocess, EmbeddingTable, PipelineConfig, Vocabulary};

pub use eval::{
    cross_validate, evaluate, fold_assignment, DomainMetrics, DomainRow, EvalReport, Predictor,
    SampleRecord,
};
pub use persist::{
    load_model, model_from_bytes, model_to_bytes, save_model, FORMAT_VERSION, MAGIC,
};
pub use train::{train_domain, train_ensemble, DomainData, TrainConfig};

/// What one domain's training run recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub cost_sensitive: bool,
    pub samples: usize,
    /// Mean cross-entropy over each epoch.
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainModel {
    pub domain: String,
    pub params: NetworkParams,
    pub meta: TrainingMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub pipeline: PipelineConfig,
    pub arch: NetworkArch,
    pub aggregation: Aggregation,
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingTable,
    pub stats: DomainStats,
    pub models: Vec<DomainModel>,
}

/// Signed per-domain confidence: `Pos_i` when the domain favours positive
/// (ties included), otherwise `−Neg_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolarityVector(pub Vec<f64>);

pub fn polarity_vector(probs: &[[f64; 2]]) -> Result<PolarityVector> {
    probs
        .iter()
        .map(|&[pos, neg]| {
            let ok = (0.0..=1.0).contains(&pos) && (0.0..=1.0).contains(&neg);
            if !ok || (pos + neg - 1.0).abs() > 1e-9 {
                return Err(Error::contract(format!(
                    "({pos}, {neg}) is not a probability pair"
                )));
            }
            Ok(if pos >= neg { pos } else { -neg })
        })
        .collect::<Result<Vec<_>>>()
        .map(PolarityVector)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Combined {
    pub domain: usize,
    pub polarity: Polarity,
    pub score: f64,
}

/// Domain from `argmax D`; polarity from the sign of `D · C`, with zero
/// counted as positive.
pub fn combine(d: &DbdVector, c: &PolarityVector) -> Result<Combined> {
    if d.0.len() != c.0.len() || d.0.is_empty() {
        return Err(Error::contract(format!(
            "D has {} entries and C has {}",
            d.0.len(),
            c.0.len()
        )));
    }
    let score: f64 = d.0.iter().zip(&c.0).map(|(a, b)| a * b).sum::<f64>() + 0.0;
    let polarity = if score >= 0.0 {
        Polarity::Positive
    } else {
        Polarity::Negative
    };
    Ok(Combined {
        domain: identify_domain(d).expect("non-empty"),
        polarity,
        score,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub domain: String,
    pub domain_index: usize,
    pub polarity: Polarity,
    pub score: f64,
    pub dbd: DbdVector,
    pub polarity_vector: PolarityVector,
    /// `(Pos_i, Neg_i)` from each domain network.
    pub probabilities: Vec<[f64; 2]>,
    /// Set when no token of the text carries domain evidence.
    pub no_evidence: bool,
}

impl EnsembleModel {
    pub fn domains(&self) -> &[String] {
        self.stats.domains()
    }

    pub fn seq_len(&self) -> usize {
        self.arch.seq_len
    }

    /// Embedded, padded input matrix for already-preprocessed tokens.
    pub fn encode(&self, tokens: &[String]) -> Result<Tensor> {
        let ids = encode_pad(tokens, &self.vocab, self.arch.seq_len);
        embed(&ids, &self.embeddings)
    }

    pub fn predict(&self, text: &str) -> Result<Prediction> {
        let tokens = preprocess(text, &self.pipeline);
        let x = self.encode(&tokens)?;
        let mut probabilities = Vec::with_capacity(self.models.len());
        for m in &self.models {
            let p = m.params.forward(&x, &self.arch)?.probabilities;
            probabilities.push([p[0], p[1]]);
        }
        let c = polarity_vector(&probabilities)?;
        let d = document_dbd_with(&tokens, &self.stats, self.aggregation);
        let combined = combine(&d, &c)?;
        Ok(Prediction {
            domain: self.domains()[combined.domain].clone(),
            domain_index: combined.domain,
            polarity: combined.polarity,
            score: combined.score,
            no_evidence: d.is_zero(),
            dbd: d,
            polarity_vector: c,
            probabilities,
        })
    }

    pub(crate) fn check_consistency(&self) -> Result<()> {
        let names: Vec<&str> = self.models.iter().map(|m| m.domain.as_str()).collect();
        let stats: Vec<&str> = self.domains().iter().map(String::as_str).collect();
        if names != stats {
            return Err(Error::Integrity(format!(
                "domain order {names:?} differs from statistics {stats:?}"
            )));
        }
        if self.embeddings.dim() != self.arch.embed_dim
            || self.embeddings.vocab_size() != self.vocab.len()
        {
            return Err(Error::Integrity(
                "embedding table does not match vocabulary".into(),
            ));
        }
        Ok(())
    }
}

impl Predictor for EnsembleModel {
    fn predict(&self, text: &str) -> Result<Prediction> {
        EnsembleModel::predict(self, text)
    }

    fn domains(&self) -> &[String] {
        EnsembleModel::domains(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polarity_vector_branches() {
        let c = polarity_vector(&[[0.9, 0.1], [0.1, 0.9], [0.5, 0.5]]).unwrap();
        assert_eq!(c.0, vec![0.9, -0.9, 0.5]);
        assert!(polarity_vector(&[[0.7, 0.7]]).is_err());
        assert!(polarity_vector(&[[1.5, -0.5]]).is_err());
    }

    #[test]
    fn combine_examples() {
        let d = DbdVector(vec![0.03, 0.75, 0.40]);
        let c = PolarityVector(vec![0.06, 0.08, -0.03]);
        let r = combine(&d, &c).unwrap();
        assert_eq!(r.domain, 1);
        assert_eq!(r.polarity, Polarity::Positive);
        assert!((r.score - 0.0498).abs() < 1e-12);

        let one_hot = DbdVector(vec![0.0, 1.0, 0.0]);
        let r = combine(&one_hot, &PolarityVector(vec![0.7, -0.6, 0.9])).unwrap();
        assert_eq!(
            (r.domain, r.polarity, r.score),
            (1, Polarity::Negative, -0.6)
        );

        let r = combine(&d, &PolarityVector(vec![0.0; 3])).unwrap();
        assert_eq!(r.polarity, Polarity::Positive);
        assert!(combine(&d, &PolarityVector(vec![0.1])).is_err());
    }
}
