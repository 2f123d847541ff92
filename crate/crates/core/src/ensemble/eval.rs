use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{train_ensemble, Prediction, TrainConfig};
use crate::corpus::{Dataset, Polarity};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, ConfusionMatrix, MetricsRecord};

/// Anything that maps a text to a joint (domain, polarity) prediction.
pub trait Predictor {
    fn predict(&self, text: &str) -> Result<Prediction>;
    fn domains(&self) -> &[String];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainMetrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
}

/// One row of the per-domain table, keyed by the true domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainRow {
    pub domain: String,
    pub samples: usize,
    pub polarity_accuracy: f64,
    pub domain_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub domain: String,
    pub polarity: Polarity,
    pub predicted_domain: String,
    pub predicted_polarity: Polarity,
    pub score: f64,
    pub no_evidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub polarity_confusion: ConfusionMatrix,
    pub polarity: MetricsRecord,
    pub domain: DomainMetrics,
    pub per_domain: Vec<DomainRow>,
    pub predictions: Vec<SampleRecord>,
}

fn safe_div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

fn f1(p: f64, r: f64) -> f64 {
    safe_div(2.0 * p * r, p + r)
}

/// Single-label multi-class scores over domain names. Macro averages run
/// over every class that appears as truth or prediction.
fn domain_metrics(pairs: &[(&str, &str)]) -> DomainMetrics {
    let mut classes: BTreeMap<&str, [u64; 3]> = BTreeMap::new();
    let mut correct = 0u64;
    for &(truth, pred) in pairs {
        if truth == pred {
            correct += 1;
            classes.entry(truth).or_default()[0] += 1;
        } else {
            classes.entry(pred).or_default()[1] += 1;
            classes.entry(truth).or_default()[2] += 1;
        }
    }
    let n = pairs.len() as f64;
    let k = classes.len() as f64;
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for [tp, fp, fn_] in classes.values().map(|c| c.map(|v| v as f64)) {
        let p = safe_div(tp, tp + fp);
        let r = safe_div(tp, tp + fn_);
        p_sum += p;
        r_sum += r;
        f_sum += f1(p, r);
    }
    let accuracy = safe_div(correct as f64, n);
    DomainMetrics {
        accuracy,
        macro_precision: safe_div(p_sum, k),
        macro_recall: safe_div(r_sum, k),
        macro_f1: safe_div(f_sum, k),
        micro_precision: accuracy,
        micro_recall: accuracy,
        micro_f1: accuracy,
    }
}

/// Scores `predictor` on every document of `test`.
pub fn evaluate(predictor: &(impl Predictor + Sync), test: &Dataset) -> Result<EvalReport> {
    use rayon::prelude::*;

    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for d in test.domains() {
        if !predictor.domains().contains(d) {
            return Err(Error::contract(format!(
                "test domain `{d}` is unknown to the model"
            )));
        }
    }
    let preds: Vec<Prediction> = test
        .documents()
        .par_iter()
        .map(|d| predictor.predict(&d.text))
        .collect::<Result<_>>()?;

    let docs = test.documents();
    let cm = ConfusionMatrix::from_pairs(
        preds
            .iter()
            .zip(docs)
            .map(|(p, d)| (p.polarity, d.polarity)),
    );
    let pairs: Vec<(&str, &str)> = docs
        .iter()
        .zip(&preds)
        .map(|(d, p)| (d.domain.as_str(), p.domain.as_str()))
        .collect();
    let per_domain = test
        .domains()
        .iter()
        .filter_map(|name| {
            let rows: Vec<usize> = (0..docs.len())
                .filter(|&i| &docs[i].domain == name)
                .collect();
            if rows.is_empty() {
                return None;
            }
            let n = rows.len() as f64;
            let pol = rows
                .iter()
                .filter(|&&i| preds[i].polarity == docs[i].polarity)
                .count();
            let dom = rows.iter().filter(|&&i| &preds[i].domain == name).count();
            Some(DomainRow {
                domain: name.clone(),
                samples: rows.len(),
                polarity_accuracy: pol as f64 / n,
                domain_accuracy: dom as f64 / n,
            })
        })
        .collect();
    let predictions = docs
        .iter()
        .zip(&preds)
        .enumerate()
        .map(|(index, (d, p))| SampleRecord {
            index,
            domain: d.domain.clone(),
            polarity: d.polarity,
            predicted_domain: p.domain.clone(),
            predicted_polarity: p.polarity,
            score: p.score,
            no_evidence: p.no_evidence,
        })
        .collect();
    Ok(EvalReport {
        samples: docs.len(),
        polarity_confusion: cm,
        polarity: compute_metrics(&cm)?,
        domain: domain_metrics(&pairs),
        per_domain,
        predictions,
    })
}

/// Fold index of every document. Documents are shuffled within their
/// (domain, polarity) cell and dealt round-robin, so fold sizes differ by
/// at most one and every cell is spread evenly.
pub fn fold_assignment(data: &Dataset, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || k > data.len() {
        return Err(Error::contract(format!(
            "{k} folds requested for {} documents",
            data.len()
        )));
    }
    let mut cells: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, d) in data.documents().iter().enumerate() {
        let dom = data.domain_index(&d.domain).expect("closed domain set");
        cells
            .entry((dom, d.polarity.class_index()))
            .or_default()
            .push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; data.len()];
    let mut next = 0;
    for members in cells.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[i] = next % k;
            next += 1;
        }
    }
    Ok(folds)
}

/// `k`-fold cross-validation: retrains on each complement and scores the
/// held-out fold.
pub fn cross_validate(data: &Dataset, k: usize, config: &TrainConfig) -> Result<Vec<EvalReport>> {
    let folds = fold_assignment(data, k, config.seed)?;
    (0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..data.len()).partition(|&i| folds[i] == f);
            let model = train_ensemble(&data.subset(&train), config)?;
            evaluate(&model, &data.subset(&test))
        })
        .collect()
}
