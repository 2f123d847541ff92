//! Multi-domain sentiment classification with per-domain capsule networks.
//!
//! Documents are tokenized and embedded ([`text`]), each domain trains its
//! own Bi-GRU/capsule classifier ([`layers`]), and predictions are blended by
//! how strongly the document's words belong to each domain ([`dbd`]).

pub mod corpus;
pub mod dbd;
pub mod ensemble;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod text;

pub use corpus::{
    generate_synthetic, generate_synthetic_with_vocab, load_dataset, split, DataFormat, Dataset,
    LabeledDocument, Polarity, SyntheticSpec, SyntheticVocab,
};
pub use dbd::{
    build_domain_stats, document_dbd, document_dbd_with, identify_domain, word_dbd, Aggregation,
    DbdVector, DomainStats, WordDbd,
};
pub use ensemble::{
    combine, cross_validate, evaluate, load_model, polarity_vector, save_model, train_ensemble,
    EnsembleModel, EvalReport, Prediction, Predictor, TrainConfig,
};
pub use error::{Error, Result};
pub use metrics::{compute_metrics, ConfusionMatrix, CostState, MetricsRecord};
pub use text::{
    build_vocabulary, embed, encode_pad, preprocess, EmbeddingTable, MaxLen, PipelineConfig,
    Vocabulary,
};
