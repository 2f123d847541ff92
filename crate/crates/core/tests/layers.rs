use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wcaps_autodiff::{Bindings, Tensor};
use wcaps_core::layers::{
    bigru_forward, build_network_graph, capsule_layer, dynamic_routing, gru_sequence, gru_step,
    squash, BiGruParams, CandidateActivation, CapsuleParams, GruParams, NetworkArch, NetworkParams,
};

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
    .unwrap()
}

fn rand_gru(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> GruParams {
    let w = |rng: &mut ChaCha8Rng| rand_tensor(rng, &[hidden, input], 0.8);
    let u = |rng: &mut ChaCha8Rng| rand_tensor(rng, &[hidden, hidden], 0.8);
    let b = |rng: &mut ChaCha8Rng| rand_tensor(rng, &[hidden], 0.5);
    GruParams {
        w_z: w(rng),
        w_r: w(rng),
        w_h: w(rng),
        u_z: u(rng),
        u_r: u(rng),
        u_n: u(rng),
        b_z: b(rng),
        b_r: b(rng),
        b_h: b(rng),
    }
}

// Straight-line GRU step written against raw slices.
fn oracle_step(x: &[f64], h: &[f64], p: &GruParams) -> Vec<f64> {
    let hid = h.len();
    let mv = |m: &Tensor, v: &[f64], r: usize| -> f64 {
        let cols = m.shape()[1];
        (0..cols).map(|c| m.data()[r * cols + c] * v[c]).sum()
    };
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let z: Vec<f64> = (0..hid)
        .map(|r| sig(mv(&p.w_z, x, r) + mv(&p.u_z, h, r) + p.b_z.data()[r]))
        .collect();
    let rg: Vec<f64> = (0..hid)
        .map(|r| sig(mv(&p.w_r, x, r) + mv(&p.u_r, h, r) + p.b_r.data()[r]))
        .collect();
    let rh: Vec<f64> = (0..hid).map(|k| rg[k] * h[k]).collect();
    let c: Vec<f64> = (0..hid)
        .map(|r| (mv(&p.w_h, x, r) + mv(&p.u_n, &rh, r) + p.b_h.data()[r]).tanh())
        .collect();
    (0..hid)
        .map(|k| (1.0 - z[k]) * h[k] + z[k] * c[k])
        .collect()
}

#[test]
fn bigru_equals_two_unidirectional_passes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (m, e, h) = (3, 4, 5);
    let params = BiGruParams {
        forward: rand_gru(&mut rng, e, h),
        backward: rand_gru(&mut rng, e, h),
    };
    let x = rand_tensor(&mut rng, &[m, e], 1.0);
    let out = bigru_forward(&x, &params, CandidateActivation::Tanh).unwrap();

    let mut state = vec![0.0; h];
    let fw: Vec<Vec<f64>> = (0..m)
        .map(|t| {
            state = oracle_step(x.row(t), &state, &params.forward);
            state.clone()
        })
        .collect();
    let mut bw = vec![vec![0.0; h]; m];
    let mut state = vec![0.0; h];
    for t in (0..m).rev() {
        state = oracle_step(x.row(t), &state, &params.backward);
        bw[t] = state.clone();
    }
    for (t, (f, b)) in fw.iter().zip(&bw).enumerate() {
        let expected: Vec<f64> = f.iter().chain(b).copied().collect();
        for (a, b) in out.row(t).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "row {t}: {a} vs {b}");
        }
    }
}

#[test]
fn palindrome_with_shared_params_mirrors() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = rand_gru(&mut rng, 3, 4);
    let params = BiGruParams {
        forward: p.clone(),
        backward: p,
    };
    let a = rand_tensor(&mut rng, &[1, 3], 1.0);
    let b = rand_tensor(&mut rng, &[1, 3], 1.0);
    let c = rand_tensor(&mut rng, &[1, 3], 1.0);
    let rows: Vec<f64> = [&a, &b, &c, &b, &a]
        .iter()
        .flat_map(|t| t.data().to_vec())
        .collect();
    let x = Tensor::matrix(5, 3, rows).unwrap();
    let out = bigru_forward(&x, &params, CandidateActivation::Tanh).unwrap();
    for t in 0..5 {
        assert_eq!(&out.row(t)[4..], &out.row(4 - t)[..4]);
    }
}

#[test]
fn routing_matches_hand_transcript() {
    // N = 2 inputs, J = 2 capsules, d = 2.
    let u = [[[0.5, -0.2], [0.1, 0.3]], [[-0.4, 0.6], [0.2, 0.2]]];
    let flat: Vec<f64> = u.iter().flatten().flatten().copied().collect();
    let r = dynamic_routing(&Tensor::new(vec![2, 2, 2], flat).unwrap(), 3).unwrap();

    let sq = |s: [f64; 2]| {
        let n2 = s[0] * s[0] + s[1] * s[1];
        let k = n2 / (1.0 + n2) / n2.sqrt();
        [s[0] * k, s[1] * k]
    };
    let soft = |b: [f64; 2]| {
        let m = b[0].max(b[1]);
        let e = [(b[0] - m).exp(), (b[1] - m).exp()];
        [e[0] / (e[0] + e[1]), e[1] / (e[0] + e[1])]
    };
    let dot = |a: [f64; 2], b: [f64; 2]| a[0] * b[0] + a[1] * b[1];

    let mut b = [[0.0; 2]; 2];
    let mut c = [[0.0; 2]; 2];
    let mut v = [[0.0; 2]; 2];
    for iter in 0..3 {
        c = [soft(b[0]), soft(b[1])];
        for j in 0..2 {
            let s = [
                c[0][j] * u[0][j][0] + c[1][j] * u[1][j][0],
                c[0][j] * u[0][j][1] + c[1][j] * u[1][j][1],
            ];
            v[j] = sq(s);
        }
        if iter < 2 {
            for i in 0..2 {
                for j in 0..2 {
                    b[i][j] += dot(u[i][j], v[j]);
                }
            }
        }
    }
    for i in 0..2 {
        for j in 0..2 {
            assert!((r.coupling.data()[i * 2 + j] - c[i][j]).abs() < 1e-10);
            assert!((r.capsules.data()[i * 2 + j] - v[i][j]).abs() < 1e-10);
        }
    }
}

#[test]
fn capsule_layer_is_predict_then_route() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, j, d, k) = (3, 2, 4, 5);
    let hidden = rand_tensor(&mut rng, &[n, k], 1.0);
    let params = CapsuleParams {
        weights: rand_tensor(&mut rng, &[n, j, d, k], 0.5),
        routing_iterations: 3,
    };
    // Prediction vectors via explicit per-pair matrix products.
    let mut u = Vec::new();
    for i in 0..n {
        for c in 0..j {
            let base = (i * j + c) * d * k;
            let w =
                Tensor::matrix(d, k, params.weights.data()[base..base + d * k].to_vec()).unwrap();
            let h = Tensor::vector(hidden.row(i).to_vec());
            u.extend(w.matmul(&h).unwrap().into_data());
        }
    }
    let expected = dynamic_routing(&Tensor::new(vec![n, j, d], u).unwrap(), 3).unwrap();
    let got = capsule_layer(&hidden, &params).unwrap();
    for (a, b) in got.capsules.data().iter().zip(expected.capsules.data()) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn graph_forward_matches_plain_inference() {
    let arch = NetworkArch {
        seq_len: 5,
        embed_dim: 4,
        hidden_dim: 6,
        num_capsules: 3,
        capsule_dim: 4,
        routing_iterations: 3,
        ..NetworkArch::default()
    };
    for seed in 0..3 {
        let params = NetworkParams::init(&arch, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = rand_tensor(&mut rng, &[5, 4], 0.5);
        let target = Tensor::vector(vec![0.0, 1.0]);
        let plain = params.forward(&x, &arch).unwrap();

        let mut net = build_network_graph(&arch);
        let named = params.named();
        let mut b = Bindings::new();
        for (n, t) in &named {
            b.bind(n, t);
        }
        b.bind("x", &x).bind("target", &target);
        net.graph.forward(&b).unwrap();
        let probs = net.graph.value(net.probs).unwrap();
        for (a, p) in probs.data().iter().zip(&plain.probabilities) {
            assert!((a - p).abs() < 1e-12);
        }
        let hidden = net.graph.value(net.hidden).unwrap();
        for (a, p) in hidden.data().iter().zip(plain.hidden.data()) {
            assert!((a - p).abs() < 1e-12);
        }
        let loss = net.graph.value(net.loss).unwrap().item().unwrap();
        assert!((loss + plain.probabilities[1].ln()).abs() < 1e-12);
    }
}

fn routing_input() -> impl Strategy<Value = (Tensor, usize)> {
    (1usize..6, 1usize..5, 1usize..5, 1usize..5).prop_flat_map(|(n, j, d, r)| {
        prop::collection::vec(-3.0f64..3.0, n * j * d)
            .prop_map(move |v| (Tensor::new(vec![n, j, d], v).unwrap(), r))
    })
}

proptest! {
    #[test]
    fn coupling_is_a_distribution((u, r) in routing_input()) {
        let out = dynamic_routing(&u, r).unwrap();
        let j = u.shape()[1];
        for row in out.coupling.data().chunks(j) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&c| c >= 0.0));
        }
        for v in out.capsules.data().chunks(u.shape()[2]) {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((0.0..1.0).contains(&n));
        }
    }

    #[test]
    fn routing_is_deterministic((u, r) in routing_input()) {
        let a = dynamic_routing(&u, r).unwrap();
        let b = dynamic_routing(&u, r).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn squash_norm_is_monotone(dir in prop::collection::vec(-1.0f64..1.0, 1..6), a in 0.0f64..20.0, b in 0.0f64..20.0) {
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-6 && (a - b).abs() > 1e-9);
        let scaled = |k: f64| dir.iter().map(|x| x * k / norm).collect::<Vec<_>>();
        let len = |v: Vec<f64>| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(len(squash(&scaled(lo))) < len(squash(&scaled(hi))));
    }

    #[test]
    fn gru_state_stays_in_unit_box(seed in 0u64..1000, steps in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = rand_gru(&mut rng, 3, 4);
        let mut h: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        for _ in 0..steps {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            h = gru_step(&x, &h, &p).unwrap();
            prop_assert!(h.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn sequence_pass_is_stepwise(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = rand_gru(&mut rng, 2, 3);
        let x = rand_tensor(&mut rng, &[4, 2], 1.0);
        let states = gru_sequence(&x, &p, CandidateActivation::Tanh, false).unwrap();
        let mut h = vec![0.0; 3];
        for (t, s) in states.iter().enumerate() {
            h = gru_step(x.row(t), &h, &p).unwrap();
            prop_assert_eq!(&h, s);
        }
    }
}
