//! Cross-entropy, the dynamic cost-sensitive objective, and confusion-matrix
//! scores.

use serde::{Deserialize, Serialize};

use crate::corpus::Polarity;
use crate::error::{Error, Result};

/// Probabilities are clamped to this before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

/// `−ln max(p[target], 1e-12)`.
pub fn cross_entropy(p: &[f64], target: usize) -> Result<f64> {
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("probabilities sum to {total}")));
    }
    let q = p.get(target).ok_or_else(|| {
        Error::contract(format!(
            "target {target} out of range for {} classes",
            p.len()
        ))
    })?;
    Ok(-q.max(LOG_FLOOR).ln())
}

/// Counts with `Positive` as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
}

impl ConfusionMatrix {
    pub fn record(&mut self, predicted: Polarity, actual: Polarity) {
        match (predicted, actual) {
            (Polarity::Positive, Polarity::Positive) => self.true_pos += 1,
            (Polarity::Positive, Polarity::Negative) => self.false_pos += 1,
            (Polarity::Negative, Polarity::Negative) => self.true_neg += 1,
            (Polarity::Negative, Polarity::Positive) => self.false_neg += 1,
        }
    }

    /// Builds from `(predicted, actual)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Polarity, Polarity)>) -> Self {
        let mut cm = Self::default();
        for (p, a) in pairs {
            cm.record(p, a);
        }
        cm
    }

    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }
}

/// `Corrected` uses the usual definitions. `Literal` reproduces a variant
/// with G-mean over sensitivity and false-positive rate, F-score
/// `2(P+R)/(PR)` and accuracy `(TP+FN)/total`, for auditing only.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricForm {
    #[default]
    Corrected,
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub g_mean: f64,
    /// Names of metrics whose denominator was zero (reported as 0).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

fn ratio(num: f64, den: f64, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0.0 {
        if !undefined.iter().any(|u| u == name) {
            undefined.push(name.to_string());
        }
        0.0
    } else {
        num / den
    }
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsRecord> {
    compute_metrics_with(cm, MetricForm::Corrected)
}

pub fn compute_metrics_with(cm: &ConfusionMatrix, form: MetricForm) -> Result<MetricsRecord> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::contract("confusion matrix is empty"));
    }
    let [tp, fp, tn, fn_] =
        [cm.true_pos, cm.false_pos, cm.true_neg, cm.false_neg].map(|v| v as f64);
    let mut undefined = Vec::new();
    let precision = ratio(tp, tp + fp, "precision", &mut undefined);
    let recall = ratio(tp, tp + fn_, "recall", &mut undefined);
    let (accuracy, f1, g_mean) = match form {
        MetricForm::Corrected => {
            let specificity = ratio(tn, tn + fp, "g_mean", &mut undefined);
            let sensitivity = ratio(tp, tp + fn_, "g_mean", &mut undefined);
            (
                (tp + tn) / total as f64,
                ratio(
                    2.0 * precision * recall,
                    precision + recall,
                    "f1",
                    &mut undefined,
                ),
                (sensitivity * specificity).sqrt(),
            )
        }
        MetricForm::Literal => {
            let fpr = ratio(fp, tn + fp, "g_mean", &mut undefined);
            let sensitivity = ratio(tp, tp + fn_, "g_mean", &mut undefined);
            (
                (tp + fn_) / total as f64,
                ratio(
                    2.0 * (precision + recall),
                    precision * recall,
                    "f1",
                    &mut undefined,
                ),
                (sensitivity * fpr).sqrt(),
            )
        }
    };
    Ok(MetricsRecord {
        accuracy,
        precision,
        recall,
        f1,
        g_mean,
        undefined,
    })
}

/// State of the per-batch class weighting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostState {
    pub ir_overall: f64,
    pub minority: Polarity,
    pub g_mean_batch: f64,
    pub acc_batch: f64,
}

impl CostState {
    /// Starts with zero batch statistics.
    pub fn new(ir_overall: f64, minority: Polarity) -> Result<Self> {
        if !(ir_overall.is_finite() && ir_overall >= 1.0) {
            return Err(Error::contract(format!(
                "imbalance ratio {ir_overall} must be ≥ 1"
            )));
        }
        Ok(Self {
            ir_overall,
            minority,
            g_mean_batch: 0.0,
            acc_batch: 0.0,
        })
    }

    /// Majority/minority ratio of `(positive, negative)` counts. The minority
    /// is the rarer class; equal counts report `Negative`.
    pub fn from_counts(positive: usize, negative: usize) -> Result<Self> {
        if positive == 0 || negative == 0 {
            return Err(Error::contract("both classes need at least one sample"));
        }
        let minority = if positive < negative {
            Polarity::Positive
        } else {
            Polarity::Negative
        };
        let (hi, lo) = (positive.max(negative), positive.min(negative));
        Self::new(hi as f64 / lo as f64, minority)
    }

    /// Refreshes the batch statistics from this batch's predictions, unless the
    /// batch has no minority samples.
    pub fn update(&mut self, cm: &ConfusionMatrix) {
        let minority_present = match self.minority {
            Polarity::Positive => cm.true_pos + cm.false_neg > 0,
            Polarity::Negative => cm.true_neg + cm.false_pos > 0,
        };
        if !minority_present {
            return;
        }
        if let Ok(m) = compute_metrics(cm) {
            self.g_mean_batch = m.g_mean;
            self.acc_batch = m.accuracy;
        }
    }
}

/// `IR · e^{−G/2} · e^{−ACC/2}` for minority samples, 1 otherwise.
pub fn lambda_weight(state: &CostState, label: Polarity) -> f64 {
    if label == state.minority {
        state.ir_overall * (-state.g_mean_batch / 2.0).exp() * (-state.acc_batch / 2.0).exp()
    } else {
        1.0
    }
}

/// Per-class means of λ-weighted losses, summed over the classes present.
pub fn cost_sensitive_loss(samples: &[(f64, Polarity)], state: &CostState) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let mut total = 0.0;
    for class in Polarity::ALL {
        let (sum, n) = samples
            .iter()
            .filter(|(_, l)| *l == class)
            .fold((0.0, 0usize), |(s, n), (loss, l)| {
                (s + lambda_weight(state, *l) * loss, n + 1)
            });
        if n > 0 {
            total += sum / n as f64;
        }
    }
    Ok(total)
}

/// Weight applied to each sample's loss gradient in a batch, matching
/// [`cost_sensitive_loss`]: `λ / (count of that class in the batch)`.
pub fn sample_weights(labels: &[Polarity], state: Option<&CostState>) -> Vec<f64> {
    let count = |c: Polarity| labels.iter().filter(|&&l| l == c).count() as f64;
    let (npos, nneg) = (count(Polarity::Positive), count(Polarity::Negative));
    labels
        .iter()
        .map(|&l| {
            let n = if l == Polarity::Positive { npos } else { nneg };
            state.map_or(1.0, |s| lambda_weight(s, l)) / n
        })
        .collect()
}
