use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wcaps_autodiff::{Bindings, Gradients, GraphError, Tensor};

use super::{DomainModel, EnsembleModel, TrainingMeta};
use crate::corpus::{Dataset, Polarity};
use crate::dbd::{Aggregation, DomainStats};
use crate::error::{Error, Result};
use crate::layers::{build_network_graph, NetworkArch, NetworkParams};
use crate::metrics::{lambda_weight, ConfusionMatrix, CostState};
use crate::text::{
    embed, encode_pad, load_embeddings, preprocess, vocabulary_from_tokens, EmbeddingTable,
    PipelineConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// `None` picks 8, or 128 when `cost_sensitive` is set.
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub seed: u64,
    pub cost_sensitive: bool,
    /// Class that receives the λ weight. `None` uses the rarer class of the
    /// training split.
    pub minority: Option<Polarity>,
    pub pipeline: PipelineConfig,
    /// `seq_len` and `embed_dim` are overwritten from the pipeline.
    pub arch: NetworkArch,
    pub aggregation: Aggregation,
    /// Optional word-vector file used to initialize the embedding table.
    pub embeddings: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: None,
            learning_rate: 1e-3,
            seed: 42,
            cost_sensitive: false,
            minority: None,
            pipeline: PipelineConfig::default(),
            arch: NetworkArch::default(),
            aggregation: Aggregation::Mean,
            embeddings: None,
        }
    }
}

impl TrainConfig {
    pub fn batch_size(&self) -> usize {
        self.batch_size
            .unwrap_or(if self.cost_sensitive { 128 } else { 8 })
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size() == 0 {
            return Err(Error::contract("epochs and batch size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::contract("learning rate must be positive"));
        }
        self.pipeline.validate()
    }
}

/// Embedded training inputs of one domain.
#[derive(Debug, Clone)]
pub struct DomainData {
    pub name: String,
    pub samples: Vec<(Tensor, Polarity)>,
}

impl DomainData {
    fn count(&self, p: Polarity) -> usize {
        self.samples.iter().filter(|s| s.1 == p).count()
    }
}

struct Adam {
    lr: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &NetworkParams, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .named()
            .iter()
            .map(|(_, t)| vec![0.0; t.len()])
            .collect();
        Self {
            lr,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn step(&mut self, params: &mut NetworkParams, grads: &[Option<Vec<f64>>]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (k, (_, tensor)) in params.named_mut().into_iter().enumerate() {
            let Some(g) = &grads[k] else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, w) in tensor.data_mut().iter_mut().enumerate() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                *w -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

fn domain_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn one_hot(p: Polarity) -> Tensor {
    let mut v = vec![0.0; 2];
    v[p.class_index()] = 1.0;
    Tensor::vector(v)
}

/// Trains one domain network. `cost` enables λ weighting with that state.
pub fn train_domain(
    data: &DomainData,
    arch: &NetworkArch,
    config: &TrainConfig,
    seed: u64,
    mut cost: Option<CostState>,
) -> Result<DomainModel> {
    let fail = |message: String| Error::Training {
        domain: data.name.clone(),
        message,
    };
    for p in Polarity::ALL {
        let n = data.count(p);
        if n < 2 {
            return Err(fail(format!(
                "{n} {p} documents; each polarity needs at least 2"
            )));
        }
    }
    let mut params = NetworkParams::init(arch, seed)?;
    let mut net = build_network_graph(arch);
    let mut adam = Adam::new(&params, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let targets = [one_hot(Polarity::Positive), one_hot(Polarity::Negative)];
    let unit = Tensor::scalar(1.0);
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let batch_size = config.batch_size();
    let mut order: Vec<usize> = (0..data.samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(batch_size) {
            let mut class_grads = [Gradients::new(), Gradients::new()];
            let mut counts = [0usize; 2];
            let mut cm = ConfusionMatrix::default();
            for &k in batch {
                let (x, label) = &data.samples[k];
                let named = params.named();
                let mut b = Bindings::new();
                for (n, t) in &named {
                    b.bind(n, t);
                }
                b.bind("x", x);
                b.bind("target", &targets[label.class_index()]);
                net.graph.forward(&b).map_err(|e| match e {
                    GraphError::NonFiniteOutput(op) => fail(format!("{op} diverged")),
                    other => other.into(),
                })?;
                let probs = net.graph.value(net.probs).expect("evaluated").data();
                let predicted = if probs[0] >= probs[1] {
                    Polarity::Positive
                } else {
                    Polarity::Negative
                };
                cm.record(predicted, *label);
                epoch_loss += net
                    .graph
                    .value(net.loss)
                    .and_then(Tensor::item)
                    .expect("scalar");
                let c = label.class_index();
                counts[c] += 1;
                net.graph
                    .backward_into(net.loss, &unit, &mut class_grads[c])?;
            }
            let weights: [f64; 2] = match cost.as_mut() {
                Some(state) => {
                    state.update(&cm);
                    Polarity::ALL.map(|p| {
                        let n = counts[p.class_index()];
                        if n == 0 {
                            0.0
                        } else {
                            lambda_weight(state, p) / n as f64
                        }
                    })
                }
                None => [1.0 / batch.len() as f64; 2],
            };
            let combined: Vec<Option<Vec<f64>>> = names
                .iter()
                .map(|n| {
                    let mut acc: Option<Vec<f64>> = None;
                    for (c, w) in weights.iter().enumerate() {
                        if let Some(g) = class_grads[c].get(n) {
                            let acc = acc.get_or_insert_with(|| vec![0.0; g.len()]);
                            for (a, v) in acc.iter_mut().zip(g.data()) {
                                *a += w * v;
                            }
                        }
                    }
                    acc
                })
                .collect();
            adam.step(&mut params, &combined);
        }
        epoch_losses.push(epoch_loss / data.samples.len() as f64);
    }
    Ok(DomainModel {
        domain: data.name.clone(),
        params,
        meta: TrainingMeta {
            seed,
            epochs: config.epochs,
            batch_size,
            cost_sensitive: cost.is_some(),
            samples: data.samples.len(),
            epoch_losses,
        },
    })
}

fn cost_state(train: &Dataset, minority: Option<Polarity>) -> Result<CostState> {
    let count = |p| train.documents().iter().filter(|d| d.polarity == p).count();
    let (pos, neg) = (count(Polarity::Positive), count(Polarity::Negative));
    match minority {
        None => CostState::from_counts(pos, neg),
        Some(m) => {
            let (own, other) = match m {
                Polarity::Positive => (pos, neg),
                Polarity::Negative => (neg, pos),
            };
            if own == 0 {
                return Err(Error::contract(format!(
                    "no {m} documents in the training split"
                )));
            }
            CostState::new((other as f64 / own as f64).max(1.0), m)
        }
    }
}

/// Builds the pipeline and domain statistics from `train`, then trains one
/// network per domain (in parallel) on that domain's documents only.
pub fn train_ensemble(train: &Dataset, config: &TrainConfig) -> Result<EnsembleModel> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pipeline = config.pipeline.clone();
    let tokens: Vec<Vec<String>> = train
        .documents()
        .iter()
        .map(|d| preprocess(&d.text, &pipeline))
        .collect();
    let domain_of: Vec<usize> = train
        .documents()
        .iter()
        .map(|d| train.domain_index(&d.domain).expect("closed domain set"))
        .collect();
    let vocab = vocabulary_from_tokens(tokens.iter().map(Vec::as_slice), pipeline.min_count)?;
    let stats = DomainStats::from_tokens(
        train.domains().to_vec(),
        domain_of
            .iter()
            .zip(&tokens)
            .map(|(&d, t)| (d, t.as_slice())),
    )?;
    let seq_len = pipeline.resolve_max_len(tokens.iter().map(Vec::as_slice));
    let arch = NetworkArch {
        seq_len,
        embed_dim: pipeline.embed_dim,
        ..config.arch
    };
    arch.validate()?;
    let embeddings = match &config.embeddings {
        Some(path) => load_embeddings(path, &vocab, &pipeline, config.seed)?,
        None => EmbeddingTable::random(vocab.len(), pipeline.embed_dim, config.seed),
    };

    let mut per_domain: Vec<DomainData> = train
        .domains()
        .iter()
        .map(|name| DomainData {
            name: name.clone(),
            samples: Vec::new(),
        })
        .collect();
    for ((doc, toks), &d) in train.documents().iter().zip(&tokens).zip(&domain_of) {
        let x = embed(&encode_pad(toks, &vocab, seq_len), &embeddings)?;
        per_domain[d].samples.push((x, doc.polarity));
    }
    let cost = if config.cost_sensitive {
        Some(cost_state(train, config.minority)?)
    } else {
        None
    };
    let models = per_domain
        .par_iter()
        .enumerate()
        .map(|(i, data)| train_domain(data, &arch, config, domain_seed(config.seed, i), cost))
        .collect::<Result<Vec<_>>>()?;

    let model = EnsembleModel {
        pipeline,
        arch,
        aggregation: config.aggregation,
        vocab,
        embeddings,
        stats,
        models,
    };
    model.check_consistency()?;
    Ok(model)
}
