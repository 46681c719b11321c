use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::supernet::Supernet;

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("op{i}")).collect()
}

fn chain(t: usize, c: usize) -> Arc<Supernet> {
    Arc::new(Supernet::chain("chain", &vec![labels(c); t]).unwrap())
}

fn ring(t: usize, c: usize) -> Arc<Supernet> {
    Arc::new(Supernet::ring("ring", &vec![labels(c); t]).unwrap())
}

fn star(t: usize, c: usize) -> Arc<Supernet> {
    Arc::new(Supernet::star("star", &vec![labels(c); t]).unwrap())
}

fn random_dist(s: Arc<Supernet>, rank: usize, seed: u64) -> TnDistribution {
    let ranks = RankMap::uniform(&s, rank).unwrap();
    TnDistribution::init(s, ranks, InitSpec::Gaussian { sd: 1.0 }, seed).unwrap()
}

fn zeros_dist(s: Arc<Supernet>, rank: usize) -> TnDistribution {
    let ranks = RankMap::uniform(&s, rank).unwrap();
    TnDistribution::init(s, ranks, InitSpec::Zeros, 0).unwrap()
}

/// The single-edge construction: ranks 2 at both ends, the (1,1) slice is
/// `[ln 3, 0]` and the other three slices are zero.
fn single_edge_construction() -> TnDistribution {
    let s = chain(1, 2);
    let mut d = zeros_dist(s, 2);
    d.update_cores(|c| c[0].set(0, 0, 0, 3f64.ln())).unwrap();
    d
}

fn all_indices(d: &TnDistribution) -> Vec<SubgraphIndex> {
    d.supernet().enumerate_indices(1_000_000).unwrap().collect()
}

#[test]
fn softmax_examples() {
    for p in softmax(&[0.0, 0.0, 0.0]) {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
    let p = softmax(&[3f64.ln(), 0.0]);
    assert!((p[0] - 0.75).abs() < 1e-15);
    assert!((p[1] - 0.25).abs() < 1e-15);
    let p = softmax(&[1000.0, 0.0]);
    assert!(p.iter().all(|x| x.is_finite()));
    assert!((p[0] - 1.0).abs() < 1e-15);
    assert!(p[1] < 1e-300);
}

#[test]
fn normalized_core_slices_sum_to_one() {
    let d = random_dist(chain(2, 4), 3, 7);
    for a in d.normalized_cores() {
        let (rl, c, rr) = a.shape();
        for x in 0..rl {
            for y in 0..rr {
                let s: f64 = (0..c).map(|i| a.get(x, i, y)).sum();
                assert!((s - 1.0).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn init_shapes_and_determinism() {
    let d = random_dist(chain(3, 5), 2, 11);
    for c in d.cores() {
        assert_eq!(c.shape(), (2, 5, 2));
    }
    let s = chain(3, 5);
    let r = RankMap::uniform(&s, 2).unwrap();
    let a = TnDistribution::init(s.clone(), r.clone(), InitSpec::Gaussian { sd: 0.01 }, 3).unwrap();
    let b = TnDistribution::init(s, r, InitSpec::Gaussian { sd: 0.01 }, 3).unwrap();
    for (x, y) in a.cores().iter().zip(b.cores()) {
        let xb: Vec<u64> = x.values().iter().map(|v| v.to_bits()).collect();
        let yb: Vec<u64> = y.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(xb, yb);
    }
}

#[test]
fn rank_map_validation() {
    let s = chain(2, 2);
    assert!(RankMap::new(&s, vec![1, 2]).is_err());
    assert!(RankMap::new(&s, vec![1, 0, 2]).is_err());
    let r = RankMap::from_named(&s, [("n0", 1), ("n1", 2), ("n2", 3)]).unwrap();
    assert_eq!(r.as_slice(), &[1, 2, 3]);
    assert!(RankMap::from_named(&s, [("n0", 1), ("n1", 2)]).is_err());
}

#[test]
fn shape_mismatch_rejected() {
    let s = chain(1, 2);
    let r = RankMap::uniform(&s, 2).unwrap();
    let err = TnDistribution::from_cores(s, r, vec![EdgeCore::zeros(2, 3, 2)]).unwrap_err();
    assert!(matches!(err, TnError::Shape { edge: 1, .. }));
}

#[test]
fn non_finite_update_rejected() {
    let mut d = zeros_dist(chain(1, 2), 1);
    let err = d.update_cores(|c| c[0].set(0, 0, 0, f64::NAN)).unwrap_err();
    assert!(matches!(err, TnError::NonFinite { edge: 1 }));
}

#[test]
fn zeros_init_is_uniform() {
    let d = zeros_dist(chain(3, 5), 2);
    for idx in all_indices(&d) {
        assert!((d.prob(&idx).unwrap() - 1.0 / 125.0).abs() < 1e-15);
    }
    let full = zeros_dist(chain(2, 2), 2).materialize().unwrap();
    assert_eq!(full.len(), 4);
    for p in full {
        assert!((p - 0.25).abs() < 1e-15);
    }
}

#[test]
fn single_edge_construction_probability() {
    // (0.75 + 0.5 + 0.5 + 0.5) / 4, by hand over the four rank assignments.
    let d = single_edge_construction();
    let p = d.prob(&SubgraphIndex::new(vec![0])).unwrap();
    assert!((p - 0.5625).abs() < 1e-15);
    let full = d.materialize().unwrap();
    assert!((full[0] - 0.5625).abs() < 1e-15);
    assert!((full[1] - 0.4375).abs() < 1e-15);
    let am = d.argmax().unwrap();
    assert_eq!(am.index, SubgraphIndex::new(vec![0]));
    assert!(am.exact);
}

#[test]
fn rank_one_factorizes() {
    let d = random_dist(ring(3, 3), 1, 5);
    let slices: Vec<Vec<f64>> = d
        .normalized_cores()
        .iter()
        .map(|a| (0..3).map(|i| a.get(0, i, 0)).collect())
        .collect();
    for idx in all_indices(&d) {
        let expect: f64 = idx.picks().iter().enumerate().map(|(t, &i)| slices[t][i]).product();
        assert!((d.prob(&idx).unwrap() - expect).abs() < 1e-15);
        for t in 0..3 {
            let m = d.marginal(t, &idx.picks()[..t]).unwrap();
            for (a, b) in m.iter().zip(&slices[t]) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }
    let am = d.argmax().unwrap().index;
    let per_edge: Vec<usize> = slices.iter().map(|s| first_max(s)).collect();
    assert_eq!(am.picks(), per_edge.as_slice());
}

#[test]
fn materialize_normalizes_and_matches_prob() {
    for (k, s) in [chain(3, 3), ring(3, 3), star(4, 2)].into_iter().enumerate() {
        for rank in 1..=3 {
            let d = random_dist(s.clone(), rank, 100 + k as u64 * 10 + rank as u64);
            let full = d.materialize().unwrap();
            let total: f64 = full.iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "sum {total}");
            for (o, idx) in all_indices(&d).iter().enumerate() {
                let p = d.prob(idx).unwrap();
                assert!(p > 0.0);
                assert!((p - full[o]).abs() <= 1e-12 * full[o], "{p} vs {}", full[o]);
            }
        }
    }
}

#[test]
fn ring_matches_closed_formula() {
    // T[i1,i2,i3] = 1/R^3 sum_{r0,r1,r2} A1[r0,i1,r1] A2[r1,i2,r2] A3[r2,i3,r0]
    let d = random_dist(ring(3, 2), 2, 9);
    let a = d.normalized_cores();
    for idx in all_indices(&d) {
        let p = idx.picks();
        let mut expect = 0.0;
        for r0 in 0..2 {
            for r1 in 0..2 {
                for r2 in 0..2 {
                    expect += a[0].get(r0, p[0], r1) * a[1].get(r1, p[1], r2) * a[2].get(r2, p[2], r0);
                }
            }
        }
        expect /= 8.0;
        assert!((d.prob(&idx).unwrap() - expect).abs() < 1e-15);
    }
}

#[test]
fn topology_changes_the_tensor() {
    let c = chain(3, 2);
    let r = ring(3, 2);
    let dc = random_dist(c.clone(), 2, 21);
    let dr = TnDistribution::from_cores(
        r.clone(),
        RankMap::uniform(&r, 2).unwrap(),
        dc.cores().to_vec(),
    )
    .unwrap();
    let a = dc.materialize().unwrap();
    let b = dr.materialize().unwrap();
    let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff > 1e-6, "chain and ring tensors coincide: {diff}");
}

#[test]
fn self_loop_normalizes() {
    let s = Arc::new(
        Supernet::new(
            "loop",
            vec!["a".into(), "b".into()],
            vec![
                ("a".into(), "a".into(), labels(3)),
                ("a".into(), "b".into(), labels(2)),
            ],
        )
        .unwrap(),
    );
    let d = random_dist(s, 3, 4);
    let full = d.materialize().unwrap();
    assert!((full.iter().sum::<f64>() - 1.0).abs() < 1e-13);
    for (o, idx) in all_indices(&d).iter().enumerate() {
        assert!((d.prob(idx).unwrap() - full[o]).abs() < 1e-14);
    }
}

#[test]
fn marginal_matches_materialize() {
    let d = random_dist(chain(3, 3), 2, 31);
    let full = d.materialize().unwrap();
    let radices = d.supernet().choice_counts();
    for prefix_len in 0..3 {
        let prefixes: Vec<Vec<usize>> = all_indices(&d)
            .into_iter()
            .map(|i| i.picks()[..prefix_len].to_vec())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        for prefix in prefixes {
            let mut expect = vec![0.0; 3];
            for (o, p) in full.iter().enumerate() {
                let idx = SubgraphIndex::from_linear_offset(o, &radices);
                if idx.picks()[..prefix_len] == prefix[..] {
                    expect[idx.picks()[prefix_len]] += p;
                }
            }
            let z: f64 = expect.iter().sum();
            let m = d.marginal(prefix_len, &prefix).unwrap();
            assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, b) in m.iter().zip(&expect) {
                assert!((a - b / z).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn marginal_rejects_bad_prefix() {
    let d = zeros_dist(chain(2, 2), 1);
    assert!(matches!(d.marginal(1, &[]), Err(TnError::Prefix { .. })));
    assert!(d.marginal(1, &[5]).is_err());
    for p in d.marginal(1, &[1]).unwrap() {
        assert!((p - 0.5).abs() < 1e-15);
    }
}

#[test]
fn uniform_sampling_frequencies() {
    let d = zeros_dist(chain(2, 2), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut counts = [0usize; 4];
    let mut sampler = d.sampler();
    for _ in 0..40_000 {
        let idx = sampler.sample(&mut rng).unwrap();
        counts[idx.linear_offset(&[2, 2])] += 1;
    }
    for c in counts {
        assert!((c as f64 / 40_000.0 - 0.25).abs() < 0.01, "{counts:?}");
    }
}

#[test]
fn near_deterministic_sampling() {
    let mut d = zeros_dist(chain(3, 4), 2);
    d.update_cores(|cores| {
        for (t, c) in cores.iter_mut().enumerate() {
            for x in 0..2 {
                for y in 0..2 {
                    c.set(x, (t + 1) % 4, y, 12.0);
                }
            }
        }
    })
    .unwrap();
    let target = SubgraphIndex::new(vec![1, 2, 3]);
    assert!(d.prob(&target).unwrap() > 0.999);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let hits = (0..2000)
        .filter(|_| d.sample(&mut rng).unwrap() == target)
        .count();
    assert!(hits as f64 >= 0.995 * 2000.0, "{hits}");
}

#[test]
fn sampling_is_deterministic_and_cache_agrees() {
    let d = random_dist(star(3, 3), 2, 8);
    let mut r1 = ChaCha8Rng::seed_from_u64(99);
    let mut r2 = ChaCha8Rng::seed_from_u64(99);
    let mut sampler = d.sampler();
    for _ in 0..200 {
        assert_eq!(d.sample(&mut r1).unwrap(), sampler.sample(&mut r2).unwrap());
    }
}

#[test]
fn argmax_ties_are_lexicographic() {
    let d = zeros_dist(ring(3, 4), 2);
    let am = d.argmax().unwrap();
    assert_eq!(am.index, SubgraphIndex::new(vec![0, 0, 0]));
}

#[test]
fn argmax_matches_materialize() {
    for seed in 0..10 {
        let d = random_dist(ring(3, 3), 2, seed);
        let full = d.materialize().unwrap();
        let best = full.iter().copied().fold(0.0, f64::max);
        let am = d.argmax().unwrap();
        assert!(am.exact);
        let o = am.index.linear_offset(&d.supernet().choice_counts());
        assert!((full[o] - best).abs() < 1e-12);
    }
}

#[test]
fn greedy_argmax_when_not_enumerable() {
    let mut d = random_dist(chain(3, 3), 1, 4);
    d.set_caps(Caps {
        enumeration: 10,
        ..Caps::default()
    });
    let am = d.argmax().unwrap();
    assert!(!am.exact);
    // rank one: greedy decoding is exact
    d.set_caps(Caps::default());
    assert_eq!(d.argmax().unwrap().index, am.index);
}

#[test]
fn top_k_orders_and_breaks_ties() {
    let d = zeros_dist(chain(2, 3), 2);
    let (top, exact) = d.top_k(3).unwrap();
    assert!(exact);
    let got: Vec<Vec<usize>> = top.iter().map(|r| r.index.one_based()).collect();
    assert_eq!(got, vec![vec![1, 1], vec![1, 2], vec![1, 3]]);

    let d = random_dist(ring(3, 3), 2, 12);
    let (exact_top, _) = d.top_k(5).unwrap();
    let mut beam_d = d.clone();
    beam_d.set_caps(Caps {
        enumeration: 1,
        ..Caps::default()
    });
    let (beam_top, exact) = beam_d.top_k(5).unwrap();
    assert!(!exact);
    assert_eq!(
        exact_top.iter().map(|r| &r.index).collect::<Vec<_>>(),
        beam_top.iter().map(|r| &r.index).collect::<Vec<_>>()
    );
}

/// Finite-difference oracle on `log P(idx)` computed through `materialize`.
fn fd_log_prob(d: &TnDistribution, idx: &SubgraphIndex, t: usize, o: usize, h: f64) -> f64 {
    let radices = d.supernet().choice_counts();
    let eval = |delta: f64| {
        let mut e = d.clone();
        e.update_cores(|c| c[t].values_mut()[o] += delta).unwrap();
        e.materialize().unwrap()[idx.linear_offset(&radices)].ln()
    };
    (eval(h) - eval(-h)) / (2.0 * h)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

#[test]
fn log_prob_grad_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for (k, s) in [chain(3, 3), ring(3, 3), star(4, 2)].into_iter().enumerate() {
        let d = random_dist(s, 2, 40 + k as u64);
        let indices = all_indices(&d);
        for _ in 0..40 {
            let idx = &indices[rng.random_range(0..indices.len())];
            let g = d.log_prob_grad(idx).unwrap();
            let t = rng.random_range(0..d.cores().len());
            let o = rng.random_range(0..d.cores()[t].values().len());
            let fd = fd_log_prob(&d, idx, t, o, 1e-5);
            assert!(rel_err(g.0[t][o], fd) < 1e-5, "{} vs {fd}", g.0[t][o]);
        }
    }
}

#[test]
fn log_prob_grad_of_uniform_single_edge() {
    let d = zeros_dist(chain(1, 4), 1);
    let g = d.log_prob_grad(&SubgraphIndex::new(vec![2])).unwrap();
    let expect = [-0.25, -0.25, 0.75, -0.25];
    for (a, b) in g.0[0].iter().zip(expect) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn expected_score_function_is_zero() {
    let d = random_dist(ring(3, 3), 2, 55);
    let mut acc = CoreGrads::zeros_like(d.cores());
    for idx in all_indices(&d) {
        let p = d.prob(&idx).unwrap();
        acc.add_scaled(&d.log_prob_grad(&idx).unwrap(), p);
    }
    assert!(acc.max_abs() < 1e-8, "{}", acc.max_abs());
}

#[test]
fn expectation_of_constant_has_zero_gradient() {
    let d = random_dist(chain(3, 3), 2, 3);
    let (v, g) = d.expectation_grad(|_| 2.5).unwrap();
    assert!((v - 2.5).abs() < 1e-12);
    assert!(g.max_abs() < 1e-12);
}

#[test]
fn expectation_on_uniform_two_by_two() {
    let d = zeros_dist(chain(2, 2), 2);
    let (v, _) = d
        .expectation_grad(|i| if i.picks() == [0, 0] { 1.0 } else { 0.0 })
        .unwrap();
    assert!((v - 0.25).abs() < 1e-15);
}

#[test]
fn expectation_grad_routes_agree_and_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = random_dist(star(3, 3), 2, 17);
    let scores: Vec<f64> = (0..27).map(|_| rng.random::<f64>()).collect();
    let radices = d.supernet().choice_counts();
    let score = |i: &SubgraphIndex| scores[i.linear_offset(&radices)];
    let (v1, g1) = d.expectation_grad_by_assignments(score).unwrap();
    let (v2, g2) = d.expectation_grad_by_contraction(score).unwrap();
    assert!((v1 - v2).abs() < 1e-13);
    for (a, b) in g1.0.iter().flatten().zip(g2.0.iter().flatten()) {
        assert!((a - b).abs() < 1e-13);
    }
    let value_at = |e: &TnDistribution| -> f64 {
        e.materialize().unwrap().iter().zip(&scores).map(|(p, s)| p * s).sum()
    };
    for _ in 0..30 {
        let t = rng.random_range(0..3);
        let o = rng.random_range(0..d.cores()[t].values().len());
        let h = 1e-5;
        let mut plus = d.clone();
        plus.update_cores(|c| c[t].values_mut()[o] += h).unwrap();
        let mut minus = d.clone();
        minus.update_cores(|c| c[t].values_mut()[o] -= h).unwrap();
        let fd = (value_at(&plus) - value_at(&minus)) / (2.0 * h);
        assert!(rel_err(g1.0[t][o], fd) < 1e-5, "{} vs {fd}", g1.0[t][o]);
    }
}

#[test]
fn entropy_proxy_of_uniform() {
    let d = zeros_dist(chain(3, 5), 2);
    assert!((d.entropy_proxy().unwrap() - 3.0 * 5f64.ln()).abs() < 1e-12);
}

#[test]
fn checkpoint_roundtrips_bit_exactly() {
    let d = random_dist(ring(3, 3), 2, 61);
    let ck = Checkpoint::from_distribution(&d);
    let from_json = Checkpoint::from_json(&ck.to_json()).unwrap();
    let from_bin = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
    for back in [from_json, from_bin] {
        let e = back.into_distribution(d.supernet().clone()).unwrap();
        for (x, y) in d.cores().iter().zip(e.cores()) {
            assert!(x.values().iter().zip(y.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
    let other = chain(3, 3);
    assert!(matches!(
        ck.into_distribution(other),
        Err(TnError::Checkpoint(_))
    ));
    assert!(Checkpoint::from_bytes(b"TNSNCKPT\x01").is_err());
}

#[test]
fn contraction_cap_surfaces() {
    let d = random_dist(ring(3, 2), 4, 1).with_caps(Caps {
        contraction: 4,
        ..Caps::default()
    });
    assert!(matches!(
        d.prob(&SubgraphIndex::new(vec![0, 0, 0])),
        Err(TnError::ContractionTooLarge { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn normalization_holds_for_any_finite_cores(
        topo in 0usize..3,
        rank in 1usize..4,
        choices in 1usize..4,
        sd in 0.0f64..6.0,
        seed in any::<u64>(),
    ) {
        let s = match topo {
            0 => chain(3, choices),
            1 => ring(3, choices),
            _ => star(3, choices),
        };
        let ranks = RankMap::uniform(&s, rank).unwrap();
        let init = if sd == 0.0 { InitSpec::Zeros } else { InitSpec::Gaussian { sd } };
        let d = TnDistribution::init(s, ranks, init, seed).unwrap();
        let full = d.materialize().unwrap();
        prop_assert!((full.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        prop_assert!(full.iter().all(|&p| p > 0.0));
    }
}
