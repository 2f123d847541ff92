use std::sync::OnceLock;

use proptest::prelude::*;
use wcaps_core::corpus::{generate_synthetic, Dataset, LabeledDocument, Polarity, SyntheticSpec};
use wcaps_core::dbd::DbdVector;
use wcaps_core::ensemble::{
    combine, cross_validate, evaluate, fold_assignment, model_from_bytes, model_to_bytes,
    polarity_vector, EnsembleModel, PolarityVector, Prediction, Predictor, TrainConfig,
};
use wcaps_core::layers::NetworkArch;
use wcaps_core::metrics::compute_metrics;
use wcaps_core::text::PipelineConfig;
use wcaps_core::{train_ensemble, Error};

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 4,
        seed: 5,
        pipeline: PipelineConfig {
            embed_dim: 8,
            ..PipelineConfig::default()
        },
        arch: NetworkArch {
            hidden_dim: 6,
            num_capsules: 2,
            capsule_dim: 3,
            ..NetworkArch::default()
        },
        ..TrainConfig::default()
    }
}

fn small_corpus(docs: usize, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticSpec {
        num_domains: 3,
        docs_per_domain: docs,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn trained() -> &'static EnsembleModel {
    static MODEL: OnceLock<EnsembleModel> = OnceLock::new();
    MODEL.get_or_init(|| train_ensemble(&small_corpus(16, 1), &small_config()).unwrap())
}

#[test]
fn epoch_loss_trends_down() {
    let data = generate_synthetic(&SyntheticSpec {
        num_domains: 2,
        docs_per_domain: 25,
        seed: 2,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let config = TrainConfig {
        epochs: 8,
        learning_rate: 5e-3,
        ..small_config()
    };
    let model = train_ensemble(&data, &config).unwrap();
    for m in &model.models {
        let l = &m.meta.epoch_losses;
        assert_eq!(l.len(), 8);
        assert!(l.iter().all(|v| v.is_finite()));
        for w in l.windows(2) {
            assert!(w[1] <= w[0] * 1.05, "{}: {l:?}", m.domain);
        }
        assert!(l[7] < l[0]);
    }
}

#[test]
fn single_polarity_domain_is_rejected() {
    let doc = |domain: &str, text: &str, polarity| LabeledDocument {
        text: text.into(),
        domain: domain.into(),
        polarity,
    };
    let data = Dataset::new(vec![
        doc("a", "good fine good fine", Polarity::Positive),
        doc("a", "fine good fine good", Polarity::Positive),
        doc("a", "bad poor bad poor", Polarity::Negative),
        doc("a", "poor bad poor bad", Polarity::Negative),
        doc("b", "nice nice well well", Polarity::Positive),
        doc("b", "nice well nice well", Polarity::Positive),
        doc("b", "awful well nice well", Polarity::Negative),
    ])
    .unwrap();
    match train_ensemble(&data, &small_config()) {
        Err(Error::Training { domain, .. }) => assert_eq!(domain, "b"),
        other => panic!("expected a training error, got {other:?}"),
    }
}

#[test]
fn corrupt_files_are_refused() {
    let bytes = model_to_bytes(trained()).unwrap();
    assert_eq!(&model_from_bytes(&bytes).unwrap(), trained());

    let mut bumped = bytes.clone();
    bumped[8] = 2;
    assert!(matches!(
        model_from_bytes(&bumped),
        Err(Error::Version { found: 2, .. })
    ));

    let cut = &bytes[..bytes.len() - 10];
    assert!(matches!(model_from_bytes(cut), Err(Error::Integrity(_))));

    let mut flipped = bytes.clone();
    let last = flipped.len() - 3;
    flipped[last] ^= 0x01;
    assert!(matches!(
        model_from_bytes(&flipped),
        Err(Error::Integrity(_))
    ));

    assert!(matches!(
        model_from_bytes(b"short"),
        Err(Error::Integrity(_))
    ));
}

#[test]
fn unknown_text_falls_back_to_first_domain() {
    let p = trained().predict("zzzz qqqq xxxx").unwrap();
    assert!(p.no_evidence);
    assert_eq!(p.domain_index, 0);
    assert_eq!(p.score, 0.0);
}

#[test]
fn prediction_fields_are_consistent() {
    let model = trained();
    let test = small_corpus(6, 99);
    for d in test.documents() {
        let p = model.predict(&d.text).unwrap();
        assert_eq!(p.probabilities.len(), 3);
        assert_eq!(p.dbd.values().len(), 3);
        let dot: f64 = p
            .dbd
            .values()
            .iter()
            .zip(&p.polarity_vector.0)
            .map(|(a, b)| a * b)
            .sum();
        assert_eq!(p.score, dot);
        let expected = if p.score >= 0.0 {
            Polarity::Positive
        } else {
            Polarity::Negative
        };
        assert_eq!(p.polarity, expected);
    }
}

// Reads the answer off a lookup table keyed by text.
struct Oracle {
    domains: Vec<String>,
    answers: Vec<(String, String, Polarity)>,
}

impl Predictor for Oracle {
    fn predict(&self, text: &str) -> wcaps_core::Result<Prediction> {
        let (_, domain, polarity) = self
            .answers
            .iter()
            .find(|(t, _, _)| t == text)
            .expect("known text");
        let idx = self.domains.iter().position(|d| d == domain).unwrap();
        Ok(Prediction {
            domain: domain.clone(),
            domain_index: idx,
            polarity: *polarity,
            score: 1.0,
            dbd: DbdVector(vec![0.0; self.domains.len()]),
            polarity_vector: PolarityVector(vec![0.0; self.domains.len()]),
            probabilities: vec![[0.5, 0.5]; self.domains.len()],
            no_evidence: false,
        })
    }

    fn domains(&self) -> &[String] {
        &self.domains
    }
}

#[test]
fn perfect_predictor_scores_one() {
    let data = small_corpus(10, 4);
    let oracle = Oracle {
        domains: data.domains().to_vec(),
        answers: data
            .documents()
            .iter()
            .map(|d| (d.text.clone(), d.domain.clone(), d.polarity))
            .collect(),
    };
    let report = evaluate(&oracle, &data).unwrap();
    let m = &report.polarity;
    assert_eq!(
        [m.accuracy, m.precision, m.recall, m.f1, m.g_mean],
        [1.0; 5]
    );
    assert_eq!(report.domain.accuracy, 1.0);
    assert_eq!(report.domain.macro_f1, 1.0);
    assert_eq!(report.per_domain.len(), 3);
    assert_eq!(
        compute_metrics(&report.polarity_confusion).unwrap(),
        report.polarity
    );
}

#[test]
fn folds_are_balanced_and_cover_everything() {
    let data = generate_synthetic(&SyntheticSpec {
        num_domains: 4,
        docs_per_domain: 25,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let folds = fold_assignment(&data, 5, 3).unwrap();
    for f in 0..5 {
        assert_eq!(folds.iter().filter(|&&x| x == f).count(), 20);
    }
    assert!(fold_assignment(&data, 1, 3).is_err());
    assert!(fold_assignment(&data, 101, 3).is_err());
}

#[test]
fn cross_validation_reports_each_fold() {
    let data = small_corpus(10, 8);
    let config = TrainConfig {
        epochs: 1,
        ..small_config()
    };
    let reports = cross_validate(&data, 3, &config).unwrap();
    assert_eq!(reports.len(), 3);
    assert_eq!(reports.iter().map(|r| r.samples).sum::<usize>(), 30);
}

#[test]
fn unknown_test_domain_is_rejected() {
    let doc = LabeledDocument {
        text: "anything".into(),
        domain: "elsewhere".into(),
        polarity: Polarity::Positive,
    };
    let test = Dataset::new(vec![doc]).unwrap();
    assert!(evaluate(trained(), &test).is_err());
}

#[test]
fn invalid_config_is_rejected() {
    let data = small_corpus(6, 1);
    for bad in [
        TrainConfig {
            epochs: 0,
            ..small_config()
        },
        TrainConfig {
            batch_size: Some(0),
            ..small_config()
        },
        TrainConfig {
            learning_rate: -1.0,
            ..small_config()
        },
    ] {
        assert!(matches!(
            train_ensemble(&data, &bad),
            Err(Error::Contract(_))
        ));
    }
}

proptest! {
    #[test]
    fn polarity_vector_takes_the_larger_side(pos in prop::collection::vec(0.0f64..=1.0, 1..6)) {
        let pairs: Vec<[f64; 2]> = pos.iter().map(|&p| [p, 1.0 - p]).collect();
        let c = polarity_vector(&pairs).unwrap();
        for ([p, n], v) in pairs.iter().zip(&c.0) {
            prop_assert!(v.abs() >= 0.5 - 1e-9);
            if p >= n {
                prop_assert_eq!(*v, *p);
            } else {
                prop_assert_eq!(*v, -*n);
            }
        }
    }

    #[test]
    fn domain_choice_ignores_polarity(
        d in prop::collection::vec(0.0f64..1.0, 1..6),
        seed in any::<u64>(),
    ) {
        let c1: Vec<f64> = d.iter().enumerate().map(|(i, _)| ((seed >> i) & 1) as f64 - 0.5).collect();
        let c2: Vec<f64> = c1.iter().map(|v| -v * 0.3).collect();
        let a = combine(&DbdVector(d.clone()), &PolarityVector(c1)).unwrap();
        let b = combine(&DbdVector(d), &PolarityVector(c2)).unwrap();
        prop_assert_eq!(a.domain, b.domain);
    }
}
