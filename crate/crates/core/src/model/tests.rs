use super::*;
use crate::autodiff::{Array, Mode, Tape};
use crate::instances::{MotspInstance, Tour};

fn small_config() -> ModelConfig {
    ModelConfig {
        d_h: 8,
        heads: 2,
        d_ff: 16,
        ..ModelConfig::default()
    }
}

fn small_actor(seed: u64) -> ActorParameters {
    ActorParameters::init(&small_config(), &mut crate::rng::seeded(seed)).unwrap()
}

fn permuted(inst: &MotspInstance, perm: &[usize]) -> MotspInstance {
    let feats = perm.iter().flat_map(|&i| inst.feature(i).to_vec()).collect();
    MotspInstance::from_features(inst.n(), inst.m(), feats).unwrap()
}

#[test]
fn encoder_shapes_at_full_width() {
    let actor = ActorParameters::init(&ModelConfig::default(), &mut crate::rng::seeded(0)).unwrap();
    let inst = MotspInstance::generate_random(20, 1).unwrap();
    let enc = actor.encode(&inst).unwrap();
    assert_eq!(enc.nodes.shape(), &[20, 128]);
    assert_eq!(enc.graph.shape(), &[128]);
    assert_eq!(actor.config().d_k(), 16);
}

#[test]
fn graph_embedding_is_mean_of_nodes() {
    let actor = small_actor(3);
    let inst = MotspInstance::generate_random(9, 4).unwrap();
    let enc = actor.encode(&inst).unwrap();
    for j in 0..8 {
        let mean: f64 = (0..9).map(|i| enc.nodes.data()[i * 8 + j]).sum::<f64>() / 9.0;
        assert!((mean - enc.graph.data()[j]).abs() < 1e-9);
    }
}

#[test]
fn encoder_is_permutation_equivariant() {
    let actor = small_actor(5);
    let inst = MotspInstance::generate_random(6, 8).unwrap();
    let perm = [4, 2, 5, 0, 1, 3];
    let a = actor.encode(&inst).unwrap();
    let b = actor.encode(&permuted(&inst, &perm)).unwrap();
    for (new, &old) in perm.iter().enumerate() {
        for j in 0..8 {
            let (x, y) = (a.nodes.data()[old * 8 + j], b.nodes.data()[new * 8 + j]);
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }
    for (x, y) in a.graph.data().iter().zip(b.graph.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn dimension_mismatch_is_rejected() {
    let actor = small_actor(0);
    let three_obj = MotspInstance::from_features(3, 3, vec![0.5; 18]).unwrap();
    assert!(matches!(actor.encode(&three_obj), Err(crate::Error::Contract(_))));
}

#[test]
fn config_validation() {
    let bad = ModelConfig {
        d_h: 10,
        heads: 3,
        ..ModelConfig::default()
    };
    assert!(ActorParameters::init(&bad, &mut crate::rng::seeded(0)).is_err());
}

fn set(actor: &mut ActorParameters, name: &str, f: impl Fn(usize) -> f64) {
    let a = actor.store_mut().get_mut(name).unwrap();
    for (k, v) in a.data_mut().iter_mut().enumerate() {
        *v = f(k);
    }
}

fn mat_vec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| (0..cols).map(|c| w[r * cols + c] * x[c]).sum())
        .collect()
}

/// Straight-line evaluation of a one-layer, one-head encoder with frozen
/// normalization statistics; independent of the tape.
fn reference_encoder(actor: &ActorParameters, inst: &MotspInstance) -> (Vec<Vec<f64>>, Vec<f64>) {
    let cfg = actor.config();
    let (dh, dx, df, n) = (cfg.d_h, cfg.dx, cfg.d_ff, inst.n());
    let g = |name: &str| actor.store().get(name).unwrap().data().to_vec();
    let (w, b) = (g("enc.W"), g("enc.b"));
    let (wq, wk, wv, wo) = (
        g("enc.l1.head1.Wq"),
        g("enc.l1.head1.Wk"),
        g("enc.l1.head1.Wv"),
        g("enc.l1.head1.Wo"),
    );
    let h0: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            mat_vec(&w, dh, dx, inst.feature(i))
                .iter()
                .zip(&b)
                .map(|(a, b)| a + b)
                .collect()
        })
        .collect();
    let q: Vec<Vec<f64>> = h0.iter().map(|h| mat_vec(&wq, dh, dh, h)).collect();
    let k: Vec<Vec<f64>> = h0.iter().map(|h| mat_vec(&wk, dh, dh, h)).collect();
    let v: Vec<Vec<f64>> = h0.iter().map(|h| mat_vec(&wv, dh, dh, h)).collect();
    let bn = |x: &[f64], gamma: &[f64], beta: &[f64], stats: &crate::autodiff::BatchNormStats| -> Vec<f64> {
        (0..dh)
            .map(|j| gamma[j] * (x[j] - stats.mean[j]) / (stats.var[j] + stats.eps).sqrt() + beta[j])
            .collect()
    };
    let mut out = Vec::new();
    for i in 0..n {
        let u: Vec<f64> = (0..n)
            .map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt())
            .collect();
        let z: f64 = u.iter().map(|x| x.exp()).sum();
        let mut msg = vec![0.0; dh];
        for j in 0..n {
            let wij = u[j].exp() / z;
            for c in 0..dh {
                msg[c] += wij * v[j][c];
            }
        }
        let mha = mat_vec(&wo, dh, dh, &msg);
        let skip: Vec<f64> = h0[i].iter().zip(&mha).map(|(a, b)| a + b).collect();
        let h_hat = bn(&skip, &g("enc.l1.bn1.gamma"), &g("enc.l1.bn1.beta"), &actor.bn_stats()[0]);
        let hidden: Vec<f64> = mat_vec(&g("enc.l1.ff.W0"), df, dh, &h_hat)
            .iter()
            .zip(g("enc.l1.ff.b0"))
            .map(|(a, b)| (a + b).max(0.0))
            .collect();
        let ff: Vec<f64> = mat_vec(&g("enc.l1.ff.W1"), dh, df, &hidden)
            .iter()
            .zip(g("enc.l1.ff.b1"))
            .map(|(a, b)| a + b)
            .collect();
        let skip2: Vec<f64> = h_hat.iter().zip(&ff).map(|(a, b)| a + b).collect();
        out.push(bn(&skip2, &g("enc.l1.bn2.gamma"), &g("enc.l1.bn2.beta"), &actor.bn_stats()[1]));
    }
    let graph = (0..dh)
        .map(|c| out.iter().map(|h| h[c]).sum::<f64>() / n as f64)
        .collect();
    (out, graph)
}

#[test]
fn encoder_matches_hand_evaluation() {
    let cfg = ModelConfig {
        d_h: 4,
        heads: 1,
        d_ff: 3,
        ..ModelConfig::default()
    };
    let mut actor = ActorParameters::init(&cfg, &mut crate::rng::seeded(0)).unwrap();
    let names: Vec<String> = actor.store().names().to_vec();
    for (t, name) in names.iter().enumerate() {
        set(&mut actor, name, |k| (0.37 * (k + 1) as f64 + 0.11 * t as f64).sin() * 0.8);
    }
    for (s, stats) in actor.bn_stats_mut().iter_mut().enumerate() {
        for j in 0..4 {
            stats.mean[j] = 0.1 * (j as f64) - 0.05 * s as f64;
            stats.var[j] = 0.5 + 0.25 * j as f64;
        }
    }
    let inst = MotspInstance::from_features(
        3,
        2,
        vec![0.1, 0.9, 0.4, 0.2, 0.7, 0.3, 0.5, 0.8, 0.25, 0.6, 0.95, 0.05],
    )
    .unwrap();
    let (nodes, graph) = reference_encoder(&actor, &inst);
    let enc = actor.encode(&inst).unwrap();
    for i in 0..3 {
        for c in 0..4 {
            let got = enc.nodes.data()[i * 4 + c];
            assert!((got - nodes[i][c]).abs() < 1e-9, "node {i} ch {c}: {got} vs {}", nodes[i][c]);
        }
    }
    for c in 0..4 {
        assert!((enc.graph.data()[c] - graph[c]).abs() < 1e-9);
    }
}

#[test]
fn decode_distribution_respects_mask() {
    let actor = small_actor(11);
    let inst = MotspInstance::generate_random(7, 2).unwrap();
    let partial = [3, 0, 6];
    let p = actor.decode_step(&inst, &partial).unwrap();
    for &v in &partial {
        assert_eq!(p[v], 0.0);
    }
    assert!(p.iter().enumerate().all(|(i, &x)| partial.contains(&i) || x > 0.0));
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    let last = actor.decode_step(&inst, &[0, 1, 2, 3, 4, 6]).unwrap();
    assert_eq!(last[5], 1.0);
    assert!(matches!(
        actor.decode_step(&inst, &[0, 1, 2, 3, 4, 5, 6]),
        Err(crate::Error::NoFeasibleAction)
    ));
}

#[test]
fn logits_are_clipped() {
    // large weights drive tanh into saturation
    let mut actor = small_actor(12);
    for name in ["dec.Wq", "dec.Wk"] {
        set(&mut actor, name, |k| if k % 3 == 0 { 5.0 } else { -4.0 });
    }
    let inst = MotspInstance::generate_random(10, 2).unwrap();
    for partial in [&[][..], &[2, 5][..], &[1, 2, 3, 4, 5, 6, 7, 8][..]] {
        for u in actor.decode_logits(&inst, partial).unwrap() {
            assert!((-10.0..=10.0).contains(&u), "{u}");
        }
    }
}

#[test]
fn rollouts_are_permutations_and_greedy_is_deterministic() {
    let actor = small_actor(13);
    let inst = MotspInstance::generate_random(12, 5).unwrap();
    let (a, la) = actor.rollout(&inst, true, 0).unwrap();
    let (b, lb) = actor.rollout(&inst, true, 99).unwrap();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    for seed in 0..20 {
        let (t, lp) = actor.rollout(&inst, false, seed).unwrap();
        assert!(Tour::new(t.order().to_vec()).is_ok());
        assert!(lp.is_finite() && lp <= 0.0);
    }
}

#[test]
fn rollout_log_prob_is_sum_of_step_log_probs() {
    let actor = small_actor(14);
    let inst = MotspInstance::generate_random(6, 9).unwrap();
    for seed in 0..5 {
        let (tour, lp) = actor.rollout(&inst, false, seed).unwrap();
        let mut total = 0.0;
        for t in 0..6 {
            let p = actor.decode_step(&inst, &tour.order()[..t]).unwrap();
            total += p[tour.order()[t]].ln();
        }
        assert!((total - lp).abs() < 1e-6, "{total} vs {lp}");
    }
}

#[test]
fn sampled_first_steps_match_the_distribution() {
    let actor = small_actor(15);
    let inst = MotspInstance::generate_random(5, 21).unwrap();
    let probs = actor.decode_step(&inst, &[]).unwrap();
    let rollouts = 10_000;
    let mut tape = Tape::new();
    let vars = actor.store().bind(&mut tape);
    let data: Vec<f64> = (0..rollouts).flat_map(|_| inst.features().to_vec()).collect();
    let x = tape.constant(Array::new(vec![rollouts * 5, 4], data).unwrap());
    let mut bn = actor.bn_stats().to_vec();
    let mut rng = crate::rng::seeded(77);
    let out = actor
        .rollout_batch(&mut tape, &vars, x, rollouts, 5, Mode::Infer, &mut bn, DecodeMode::Sample(&mut rng))
        .unwrap();
    let mut counts = [0usize; 5];
    for t in &out.tours {
        counts[t.order()[0]] += 1;
    }
    for i in 0..5 {
        let expected = probs[i] * rollouts as f64;
        let sigma = (rollouts as f64 * probs[i] * (1.0 - probs[i])).sqrt();
        let diff = (counts[i] as f64 - expected).abs();
        assert!(diff <= 3.0 * sigma, "node {i}: {} vs {expected} (σ {sigma})", counts[i]);
    }
}

#[test]
fn greedy_ties_go_to_lowest_index() {
    // zeroed pointer weights give identical logits for every feasible node
    let mut actor = small_actor(16);
    set(&mut actor, "dec.Wq", |_| 0.0);
    let inst = MotspInstance::generate_random(6, 1).unwrap();
    let (tour, _) = actor.rollout(&inst, true, 0).unwrap();
    assert_eq!(tour.order(), &[0, 1, 2, 3, 4, 5]);
}
