use proptest::prelude::*;
use wcaps_autodiff::{finite_difference_check, Bindings, Graph, Tensor};
use wcaps_core::metrics::{
    compute_metrics, cost_sensitive_loss, cross_entropy, lambda_weight, sample_weights,
    ConfusionMatrix, CostState,
};
use wcaps_core::Polarity;

fn polarity() -> impl Strategy<Value = Polarity> {
    prop_oneof![Just(Polarity::Positive), Just(Polarity::Negative)]
}

// Scores a prediction list directly, without a confusion matrix.
fn brute(pairs: &[(Polarity, Polarity)]) -> (f64, f64, f64, f64, f64) {
    let pos = Polarity::Positive;
    let hits =
        |f: &dyn Fn(&(Polarity, Polarity)) -> bool| pairs.iter().filter(|p| f(p)).count() as f64;
    let correct = hits(&|(p, a)| p == a);
    let pred_pos = hits(&|(p, _)| *p == pos);
    let act_pos = hits(&|(_, a)| *a == pos);
    let act_neg = pairs.len() as f64 - act_pos;
    let tp = hits(&|(p, a)| *p == pos && *a == pos);
    let tn = hits(&|(p, a)| *p != pos && *a != pos);
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let p = div(tp, pred_pos);
    let r = div(tp, act_pos);
    let f = div(2.0 * p * r, p + r);
    let g = (r * div(tn, act_neg)).sqrt();
    (correct / pairs.len() as f64, p, r, f, g)
}

proptest! {
    #[test]
    fn metrics_match_brute_force(pairs in prop::collection::vec((polarity(), polarity()), 1..60)) {
        let m = compute_metrics(&ConfusionMatrix::from_pairs(pairs.iter().copied())).unwrap();
        let (acc, p, r, f, g) = brute(&pairs);
        for (a, b) in [(m.accuracy, acc), (m.precision, p), (m.recall, r), (m.f1, f), (m.g_mean, g)] {
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn lambda_shrinks_as_batch_improves(ir in 1.0f64..20.0, g1 in 0.0f64..1.0, g2 in 0.0f64..1.0, a in 0.0f64..1.0) {
        let mut s = CostState::new(ir, Polarity::Negative).unwrap();
        s.acc_batch = a;
        s.g_mean_batch = g1.min(g2);
        let hi = lambda_weight(&s, Polarity::Negative);
        s.g_mean_batch = g1.max(g2);
        let lo = lambda_weight(&s, Polarity::Negative);
        prop_assert!(lo <= hi && hi <= ir);
        prop_assert!(lo >= ir * (-1.0f64).exp() - 1e-12);
        prop_assert_eq!(lambda_weight(&s, Polarity::Positive), 1.0);
        let mut doubled = s;
        doubled.ir_overall = 2.0 * ir;
        prop_assert!((lambda_weight(&doubled, Polarity::Negative) - 2.0 * lo).abs() < 1e-12);
    }

    #[test]
    fn unit_ratio_is_plain_class_means(batch in prop::collection::vec((0.0f64..5.0, polarity()), 1..30)) {
        let s = CostState::new(1.0, Polarity::Negative).unwrap();
        let mut expected = 0.0;
        for class in Polarity::ALL {
            let losses: Vec<f64> = batch.iter().filter(|(_, l)| *l == class).map(|(v, _)| *v).collect();
            if !losses.is_empty() {
                expected += losses.iter().sum::<f64>() / losses.len() as f64;
            }
        }
        prop_assert!((cost_sensitive_loss(&batch, &s).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn weights_reproduce_the_loss(
        batch in prop::collection::vec((0.0f64..5.0, polarity()), 1..30),
        ir in 1.0f64..10.0,
        g in 0.0f64..1.0,
        a in 0.0f64..1.0,
    ) {
        let mut s = CostState::new(ir, Polarity::Positive).unwrap();
        s.g_mean_batch = g;
        s.acc_batch = a;
        let labels: Vec<Polarity> = batch.iter().map(|(_, l)| *l).collect();
        let w = sample_weights(&labels, Some(&s));
        let weighted: f64 = w.iter().zip(&batch).map(|(w, (l, _))| w * l).sum();
        prop_assert!((weighted - cost_sensitive_loss(&batch, &s).unwrap()).abs() < 1e-9);
    }
}

#[test]
fn zero_denominators_are_flagged() {
    let cm = ConfusionMatrix {
        true_neg: 4,
        ..ConfusionMatrix::default()
    };
    let m = compute_metrics(&cm).unwrap();
    assert_eq!(m.accuracy, 1.0);
    assert_eq!(
        (m.precision, m.recall, m.f1, m.g_mean),
        (0.0, 0.0, 0.0, 0.0)
    );
    assert!(m.undefined.iter().any(|u| u == "precision"));
    assert!(compute_metrics(&ConfusionMatrix::default()).is_err());
}

#[test]
fn weighted_gradient_matches_finite_differences() {
    // A 2-class linear model over three samples; E is built as Σ w_k · CE_k.
    let xs = [
        vec![0.3, -1.2, 0.5],
        vec![1.1, 0.4, -0.7],
        vec![-0.2, 0.9, 0.8],
    ];
    let labels = [Polarity::Positive, Polarity::Negative, Polarity::Negative];
    let mut state = CostState::new(3.0, Polarity::Positive).unwrap();
    state.g_mean_batch = 0.4;
    state.acc_batch = 0.6;
    let weights = sample_weights(&labels, Some(&state));

    let mut g = Graph::new();
    let w = g.param("w");
    let mut terms = Vec::new();
    for (k, label) in labels.iter().enumerate() {
        let x = g.input(&format!("x{k}"));
        let logits = g.matmul(w, x);
        let p = g.softmax(logits);
        let lp = g.log(p);
        let pick = g.select(lp, label.class_index());
        terms.push(g.scale(pick, -weights[k]));
    }
    let e = terms[1..].iter().fold(terms[0], |acc, &t| g.add(acc, t));

    let wt = Tensor::matrix(2, 3, vec![0.2, -0.1, 0.4, -0.3, 0.5, 0.1]).unwrap();
    let xt: Vec<Tensor> = xs.iter().map(|v| Tensor::vector(v.clone())).collect();
    let names: Vec<String> = (0..3).map(|k| format!("x{k}")).collect();
    let mut b = Bindings::new();
    b.bind("w", &wt);
    for (n, t) in names.iter().zip(&xt) {
        b.bind(n, t);
    }
    let value = g.eval(&b, e).unwrap().item().unwrap();

    let per_sample: Vec<(f64, Polarity)> = xs
        .iter()
        .zip(labels)
        .map(|(x, l)| {
            let logits = wt.matmul(&Tensor::vector(x.clone())).unwrap();
            let p = wcaps_autodiff::softmax(logits.data());
            (cross_entropy(&p, l.class_index()).unwrap(), l)
        })
        .collect();
    assert!((value - cost_sensitive_loss(&per_sample, &state).unwrap()).abs() < 1e-12);

    let report = finite_difference_check(&mut g, &b, e, 1e-6).unwrap();
    assert!(report.passed(), "{report:?}");
}
