use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::search::{search, Mode, SearchConfig};
use crate::supernet::Supernet;
use crate::tn::{InitSpec, RankMap};

fn abc() -> RelationalGraph {
    RelationalGraph::from_labeled([("a", "B1", "b"), ("b", "B2", "c"), ("a", "T", "c")])
}

fn id(g: &RelationalGraph, e: &str) -> EntityId {
    g.entity_id(e).unwrap()
}

fn rel(g: &RelationalGraph, r: &str) -> Candidate {
    Candidate::Relation(g.relation_id(r).unwrap())
}

#[test]
fn loads_small_tsv() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("g.tsv");
    std::fs::write(&p, "a\tB1\tb\nb\tB2\tc\na\tB1\tb\nc\tB1\ta\n").unwrap();
    let g = load_triples(&p).unwrap();
    assert_eq!(g.num_entities(), 3);
    assert_eq!(g.num_relations(), 2);
    // duplicate stored once
    assert_eq!(g.triples().len(), 3);
    assert_eq!(g.adjacency(0).nnz(), 2);
    assert_eq!(g.adjacency(1).nnz(), 1);
    assert!(g.has_triple(id(&g, "a"), 0, id(&g, "b")));
    assert_eq!(g.reverse_adjacency(1).row(id(&g, "c")), &[id(&g, "b")]);
}

#[test]
fn adjacency_matches_triples() {
    let g = RelationalGraph::from_labeled([("x", "p", "y"), ("y", "q", "z"), ("z", "p", "x")]);
    assert_eq!(g.entities(), &["x", "y", "z"]);
    assert_eq!(g.relations(), &["p", "q"]);
    for h in 0..3 {
        for r in 0..2 {
            for t in 0..3 {
                let listed = g.triples().contains(&(h, r, t));
                assert_eq!(g.has_triple(h, r, t), listed);
            }
        }
    }
}

#[test]
fn load_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.tsv");
    std::fs::write(&p, "a\tB1\tb\n\na b c\n").unwrap();
    let err = load_triples(&p).unwrap_err();
    assert!(matches!(err, RelationalError::MalformedIn { line: 3, .. }), "{err}");
    std::fs::write(&p, "\n\n").unwrap();
    assert!(matches!(load_triples(&p), Err(RelationalError::Empty(_))));
}

#[test]
fn hin_edge_types_load_like_relations() {
    let g = RelationalGraph::from_labeled([
        ("author1", "writes", "paper1"),
        ("paper1", "published_in", "venue1"),
        ("author1", "publishes_at", "venue1"),
    ]);
    let pairs = [(id(&g, "author1"), id(&g, "venue1"))];
    let mp = [rel(&g, "writes"), rel(&g, "published_in")];
    assert_eq!(hard_measure(&g, &mp, &pairs), 1.0);
}

#[test]
fn hard_measure_examples() {
    let g = abc();
    let pairs = [(id(&g, "a"), id(&g, "c"))];
    assert_eq!(hard_measure(&g, &[rel(&g, "B1"), rel(&g, "B2")], &pairs), 1.0);
    assert_eq!(hard_measure(&g, &[rel(&g, "B2"), rel(&g, "B1")], &pairs), 0.0);
    assert_eq!(hard_measure(&g, &[rel(&g, "B1"), rel(&g, "B2")], &[]), 0.0);
}

#[test]
fn identity_is_a_no_op() {
    let g = abc();
    let pairs = [(id(&g, "a"), id(&g, "c")), (id(&g, "a"), id(&g, "b"))];
    let base = [rel(&g, "B1"), rel(&g, "B2")];
    let h = hard_measure(&g, &base, &pairs);
    for pos in 0..=2 {
        let mut r = base.to_vec();
        r.insert(pos, Candidate::Identity);
        assert_eq!(hard_measure(&g, &r, &pairs), h);
    }
}

fn task_for(g: &RelationalGraph, train: Vec<(EntityId, EntityId)>, opts: ChainOptions) -> ChainTask {
    let t = g.relation_id("T").unwrap();
    ChainTask::new(g, t, train, vec![], vec![], opts).unwrap()
}

#[test]
fn candidates_exclude_target_by_default() {
    let g = abc();
    let task = task_for(&g, vec![], ChainOptions::default());
    assert_eq!(task.labels(), &[IDENTITY_LABEL, "B1", "B2"]);
    let all = task_for(
        &g,
        vec![],
        ChainOptions {
            exclude_target: false,
            include_identity: false,
            ..Default::default()
        },
    );
    assert_eq!(all.labels(), &["B1", "B2", "T"]);
}

#[test]
fn single_edge_rank_one_uniform_is_average() {
    let g = abc();
    let opts = ChainOptions {
        chain_length: 1,
        include_identity: false,
        ..Default::default()
    };
    let task = task_for(&g, vec![], opts);
    let s = Arc::new(task.supernet());
    let d = TnDistribution::init(s.clone(), RankMap::uniform(&s, 1).unwrap(), InitSpec::Zeros, 0).unwrap();
    let a = id(&g, "a");
    let b = id(&g, "b");
    let c = id(&g, "c");
    let row_a = relaxed_row(&g, &task, &d, a).unwrap();
    assert_eq!(row_a.get(b), 0.5);
    assert_eq!(row_a.get(c), 0.0);
    let row_b = relaxed_row(&g, &task, &d, b).unwrap();
    assert_eq!(row_b.get(c), 0.5);
}

/// Random graph with `n` entities and `r` relations plus a target relation `T`.
fn random_graph(n: usize, r: usize, p: f64, seed: u64) -> (RelationalGraph, Vec<(EntityId, EntityId)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::default();
    for e in 0..n {
        b.entity(&format!("e{e}"));
    }
    for k in 0..r {
        b.relation(&format!("r{k}"));
    }
    let t = b.relation("T");
    let mut train = Vec::new();
    for x in 0..n as u32 {
        for y in 0..n as u32 {
            for k in 0..r as u32 {
                if rng.random_bool(p) {
                    b.push_ids((x, k, y));
                }
            }
            if rng.random_bool(p) {
                b.push_ids((x, t, y));
                train.push((x, y));
            }
        }
    }
    (b.finish(), train)
}

fn enumerated_value(g: &RelationalGraph, task: &ChainTask, d: &TnDistribution) -> f64 {
    let s = d.supernet();
    s.enumerate_indices(1 << 20)
        .unwrap()
        .map(|idx| {
            let p = d.prob(&idx).unwrap();
            p * path_count_sum(g, &task.rule_candidates(&idx), &task.train)
        })
        .sum()
}

#[test]
fn factorized_matches_enumeration() {
    for (seed, t_len, rank) in [(0, 2, 1), (1, 2, 2), (2, 3, 2), (3, 2, 3)] {
        let (g, train) = random_graph(30, 3, 0.06, seed);
        let task = task_for(&g, train, ChainOptions { chain_length: t_len, ..Default::default() });
        let s = Arc::new(task.supernet());
        let d = TnDistribution::init(s.clone(), RankMap::uniform(&s, rank).unwrap(), InitSpec::Gaussian { sd: 1.0 }, seed)
            .unwrap();
        let (v, _) = relaxed_objective(&g, &task, &d).unwrap();
        let oracle = enumerated_value(&g, &task, &d);
        assert!((v - oracle).abs() <= 1e-9 * oracle.abs().max(1.0), "{v} vs {oracle}");
    }
}

#[test]
fn mixed_ranks_match_enumeration() {
    let (g, train) = random_graph(40, 4, 0.04, 7);
    let task = task_for(&g, train, ChainOptions { chain_length: 3, ..Default::default() });
    let s = Arc::new(task.supernet());
    let ranks = RankMap::new(&s, vec![1, 3, 2, 2]).unwrap();
    let d = TnDistribution::init(s, ranks, InitSpec::Gaussian { sd: 0.8 }, 3).unwrap();
    let (v, _) = relaxed_objective(&g, &task, &d).unwrap();
    let oracle = enumerated_value(&g, &task, &d);
    assert!((v - oracle).abs() <= 1e-9 * oracle.max(1.0));
}

fn fd_check(clamp: bool, seed: u64) {
    let (g, train) = random_graph(25, 3, 0.08, seed);
    let opts = ChainOptions {
        chain_length: 2,
        clamp,
        ..Default::default()
    };
    let task = task_for(&g, train, opts);
    let s = Arc::new(task.supernet());
    let d = TnDistribution::init(s.clone(), RankMap::uniform(&s, 2).unwrap(), InitSpec::Gaussian { sd: 0.5 }, seed)
        .unwrap();
    let (_, grad) = relaxed_objective(&g, &task, &d).unwrap();
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..40 {
        let t = rng.random_range(0..d.cores().len());
        let k = rng.random_range(0..d.cores()[t].values().len());
        let shifted = |delta: f64| {
            let mut e = d.clone();
            e.update_cores(|c| c[t].values_mut()[k] += delta).unwrap();
            relaxed_objective(&g, &task, &e).unwrap().0
        };
        let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
        let an = grad.0[t][k];
        let err = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-3);
        assert!(err < 1e-5, "edge {t} entry {k}: fd {fd} analytic {an}");
    }
}

#[test]
fn gradient_matches_finite_differences() {
    fd_check(false, 11);
    fd_check(false, 12);
}

#[test]
fn clamped_gradient_matches_finite_differences() {
    fd_check(true, 13);
}

#[test]
fn relaxed_objective_rejects_non_chains() {
    let g = abc();
    let task = task_for(&g, vec![], ChainOptions::default());
    let ring = Arc::new(Supernet::ring("r", &vec![task.labels().to_vec(); 2]).unwrap());
    let d = TnDistribution::init(ring.clone(), RankMap::uniform(&ring, 1).unwrap(), InitSpec::Zeros, 0).unwrap();
    assert!(matches!(relaxed_objective(&g, &task, &d), Err(RelationalError::NotChain)));
}

#[test]
fn rank_metric_examples() {
    let row = SparseVec { idx: vec![0, 1, 2], val: vec![1.0, 3.0, 2.0] };
    assert_eq!(rank_of(&row, 1, 5, None), 1);
    assert_eq!(rank_of(&row, 2, 5, None), 2);
    // pessimistic: y ties with one other
    let tie = SparseVec { idx: vec![0, 1], val: vec![2.0, 2.0] };
    assert_eq!(rank_of(&tie, 1, 5, None), 2);
    // zero score ties with every other zero-scored entity
    assert_eq!(rank_of(&tie, 4, 5, None), 5);
    let filt: std::collections::HashSet<EntityId> = [0, 3].into_iter().collect();
    assert_eq!(rank_of(&tie, 1, 5, Some(&filt)), 1);
    assert_eq!(rank_of(&tie, 4, 5, Some(&filt)), 3);
}

#[test]
fn mrr_and_hits() {
    let g = RelationalGraph::from_labeled([
        ("a", "B", "b"),
        ("a", "B", "c"),
        ("b", "C", "d"),
        ("c", "C", "d"),
        ("c", "C", "e"),
        ("a", "T", "d"),
    ]);
    let task = task_for(&g, vec![], ChainOptions::default());
    let rule = [rel(&g, "B"), rel(&g, "C")];
    let a = id(&g, "a");
    // d has two paths, e one
    let m = rank_metrics(&g, &task, RowScorer::Rule(&rule), &[(a, id(&g, "d"))], &[1, 3], None).unwrap();
    assert_eq!(m.mrr, 1.0);
    assert_eq!(m.hits_at(1), Some(1.0));
    let m = rank_metrics(&g, &task, RowScorer::Rule(&rule), &[(a, id(&g, "e"))], &[1, 3], None).unwrap();
    assert_eq!(m.mrr, 0.5);
    assert_eq!(m.hits_at(1), Some(0.0));
    assert_eq!(m.hits_at(3), Some(1.0));
    assert!(matches!(
        rank_metrics(&g, &task, RowScorer::Rule(&rule), &[], &[1], None),
        Err(RelationalError::EmptyQueries)
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn metric_sanity(seed in 0u64..10_000, nq in 1usize..12) {
        let (g, train) = random_graph(20, 3, 0.1, seed);
        let task = task_for(&g, train, ChainOptions::default());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let queries: Vec<(EntityId, EntityId)> = (0..nq).map(|_| (rng.random_range(0..20), rng.random_range(0..20))).collect();
        let rule = [Candidate::Relation(rng.random_range(0..3)), Candidate::Relation(rng.random_range(0..3))];
        let ks = [1, 3, 10, 20];
        let filt = tail_filter(task.train.iter());
        for f in [None, Some(&filt)] {
            let m = rank_metrics(&g, &task, RowScorer::Rule(&rule), &queries, &ks, f).unwrap();
            prop_assert!(m.mrr > 0.0 && m.mrr <= 1.0);
            let hs: Vec<f64> = m.hits.iter().map(|h| h.1).collect();
            prop_assert!(hs.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(hs[3], 1.0);
        }
    }
}

#[test]
fn top_rules_under_uniform_distribution() {
    let g = abc();
    let task = task_for(&g, vec![], ChainOptions::default());
    let s = Arc::new(task.supernet());
    let d = TnDistribution::init(s.clone(), RankMap::uniform(&s, 2).unwrap(), InitSpec::Zeros, 0).unwrap();
    let rules = extract_top_rules(&d, &task, 3).unwrap();
    let rel: Vec<Vec<&str>> = rules.iter().map(|r| r.relations.iter().map(String::as_str).collect()).collect();
    assert_eq!(rel, vec![vec![IDENTITY_LABEL, IDENTITY_LABEL], vec![IDENTITY_LABEL, "B1"], vec![IDENTITY_LABEL, "B2"]]);
    assert!(rules.iter().all(|r| (r.score - 1.0 / 9.0).abs() < 1e-12));
    assert_eq!(extract_top_rules(&d, &task, 100).unwrap().len(), 9);
}

#[test]
fn rule_text_format() {
    let g = abc();
    let task = task_for(&g, vec![], ChainOptions::default());
    let r = ChainRule { relations: vec!["B1".into(), "B2".into()], score: 0.5 };
    assert_eq!(task.format_rule(&r), "T(C,A) <= B1(C,B1), B2(B1,A) [prob=0.500000]");
    let short = ChainRule { relations: vec![IDENTITY_LABEL.into(), "B2".into()], score: 0.25 };
    assert_eq!(task.format_rule(&short), "T(C,A) <= B2(C,A) [prob=0.250000]");
    assert_eq!(task.resolve(&r).unwrap(), vec![rel(&g, "B1"), rel(&g, "B2")]);
    let text = rules_text(&task, &[r.clone(), short]);
    assert_eq!(text.lines().count(), 2);
    let json = serde_json::to_string(&rules_file(&task, &[r])).unwrap();
    assert!(json.contains("\"relations\":[\"B1\",\"B2\"]"));
}

fn planted_spec(seed: u64, noise: f64) -> PlantedKgSpec {
    PlantedKgSpec {
        n_entities: 60,
        n_relations: 6,
        rule: vec![1, 4],
        density: 0.03,
        coverage: 1.0,
        noise,
        seed,
        options: ChainOptions::default(),
    }
}

#[test]
fn planted_kg_is_deterministic() {
    let a = generate_planted_kg(&planted_spec(5, 0.2)).unwrap();
    let b = generate_planted_kg(&planted_spec(5, 0.2)).unwrap();
    assert_eq!(a.graph, b.graph);
    assert_eq!(a.task, b.task);
    let c = generate_planted_kg(&planted_spec(6, 0.2)).unwrap();
    assert_ne!(a.graph.content_hash(), c.graph.content_hash());
}

#[test]
fn planted_rule_is_enumeration_best_without_noise() {
    let kg = generate_planted_kg(&planted_spec(2, 0.0)).unwrap();
    let planted = kg.task.resolve(&kg.planted).unwrap();
    let n_train = kg.task.train.len() as f64;
    assert_eq!(hard_measure(&kg.graph, &planted, &kg.task.train), n_train);
    let s = kg.task.supernet();
    for idx in s.enumerate_indices(1 << 20).unwrap() {
        let rule = kg.task.rule_candidates(&idx);
        if rule != planted {
            assert!(hard_measure(&kg.graph, &rule, &kg.task.train) < n_train, "{idx}");
        }
    }
}

#[test]
fn planted_rule_survives_noise() {
    let mut best_is_planted = 0;
    for seed in 0..5 {
        let kg = generate_planted_kg(&planted_spec(seed, 0.5)).unwrap();
        let planted = kg.task.resolve(&kg.planted).unwrap();
        let s = kg.task.supernet();
        let best = s
            .enumerate_indices(1 << 20)
            .unwrap()
            .map(|i| kg.task.rule_candidates(&i))
            .max_by(|a, b| {
                hard_measure(&kg.graph, a, &kg.task.train).total_cmp(&hard_measure(&kg.graph, b, &kg.task.train))
            })
            .unwrap();
        if best == planted {
            best_is_planted += 1;
        }
    }
    assert_eq!(best_is_planted, 5);
}

#[test]
fn empty_target_is_an_error() {
    let mut s = planted_spec(0, 0.0);
    s.density = 0.0;
    assert!(matches!(generate_planted_kg(&s), Err(RelationalError::EmptyTarget)));
}

#[test]
fn scoring_touches_only_reachable_rows() {
    // 5000 entities, but the query head reaches only a handful
    let mut b = GraphBuilder::default();
    for e in 0..5000 {
        b.entity(&format!("e{e}"));
    }
    let r = b.relation("r");
    for k in 0..4999u32 {
        b.push_ids((k, r, k + 1));
    }
    b.push_ids((0, r, 17));
    let g = b.finish();
    let mut sc = ChainScorer::new(&g);
    let v = sc.path_counts(0, &[Candidate::Relation(r), Candidate::Relation(r), Candidate::Relation(r)]);
    assert_eq!(v.idx, vec![3, 19]);
    assert!(sc.peak_frontier() <= 2, "{}", sc.peak_frontier());
}

#[test]
fn deterministic_search_finds_planted_rule() {
    let kg = generate_planted_kg(&planted_spec(1, 0.2)).unwrap();
    let graph = Arc::new(kg.graph);
    let task = Arc::new(kg.task);
    let ev = KgEvaluator::new(graph.clone(), task.clone(), true);
    let s = Arc::new(task.supernet());
    let mut d = TnDistribution::init(s.clone(), RankMap::uniform(&s, 2).unwrap(), InitSpec::default(), 1).unwrap();
    let mut cfg = SearchConfig::new(Mode::Deterministic);
    cfg.iterations = 200;
    cfg.learning_rate = Some(0.05);
    let rep = search(&mut d, &ev, &cfg).unwrap();
    let top = extract_top_rules(&d, &task, 3).unwrap();
    assert_eq!(top[0].relations, kg.planted.relations);
    assert_eq!(rep.evaluations_used, 1);
    assert!(rep.best_score > 0.0 && rep.best_score <= 1.0);
}
