use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use super::*;
use crate::supernet::Supernet;
use crate::tn::{InitSpec, RankMap};

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("op{i}")).collect()
}

struct Table {
    radices: Vec<usize>,
    scores: Vec<f64>,
    calls: AtomicUsize,
}

impl Table {
    fn new(radices: Vec<usize>, scores: Vec<f64>) -> Self {
        Self {
            radices,
            scores,
            calls: AtomicUsize::new(0),
        }
    }
}

impl TaskEvaluator for Table {
    fn evaluate(&self, idx: &SubgraphIndex) -> Result<f64, EvalError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(self.scores[idx.linear_offset(&self.radices)])
    }
}

struct Failing;

impl TaskEvaluator for Failing {
    fn evaluate(&self, _: &SubgraphIndex) -> Result<f64, EvalError> {
        Err(EvalError("boom".into()))
    }
}

fn dist(s: &Arc<Supernet>, rank: usize, seed: u64) -> TnDistribution {
    TnDistribution::init(
        s.clone(),
        RankMap::uniform(s, rank).unwrap(),
        InitSpec::default(),
        seed,
    )
    .unwrap()
}

/// Planted optimum at (2,3) on a 2-edge, 3-choice chain; every other entry <= 0.5.
fn planted() -> (Arc<Supernet>, Table, SubgraphIndex) {
    let s = Arc::new(Supernet::chain("p", &vec![labels(3); 2]).unwrap());
    let planted = SubgraphIndex::new(vec![1, 2]);
    let mut scores: Vec<f64> = (0..9).map(|k| 0.05 * k as f64).collect();
    scores[planted.linear_offset(&[3, 3])] = 1.0;
    (s, Table::new(vec![3, 3], scores), planted)
}

#[test]
fn stochastic_recovers_planted_optimum() {
    let (s, table, planted) = planted();
    let mut hits = 0;
    for seed in 0..10 {
        let mut d = dist(&s, 2, seed);
        let mut cfg = SearchConfig::new(Mode::Stochastic);
        cfg.seed = seed;
        cfg.iterations = 300;
        let report = search(&mut d, &table, &cfg).unwrap();
        if report.best_index == planted {
            hits += 1;
        }
    }
    assert!(hits >= 9, "{hits}/10");
}

#[test]
fn budget_accounting_is_exact() {
    let (s, table, _) = planted();
    let mut d = dist(&s, 2, 0);
    let mut cfg = SearchConfig::new(Mode::Stochastic);
    cfg.iterations = 37;
    cfg.samples_per_step = 3;
    let report = search(&mut d, &table, &cfg).unwrap();
    assert_eq!(report.evaluations_used, 37 * 3 + 1);
    assert_eq!(table.calls.load(Ordering::Relaxed), 37 * 3 + 1);
    assert!(report.trajectory.len() <= 37);
    assert_eq!(report.iterations_run, 37);
}

#[test]
fn constant_reward_gives_zero_advantage() {
    let s = Arc::new(Supernet::chain("c", &vec![labels(3); 2]).unwrap());
    let table = Table::new(vec![3, 3], vec![0.7; 9]);
    let mut d = dist(&s, 2, 1);
    let before = d.cores().to_vec();
    let mut cfg = SearchConfig::new(Mode::Stochastic);
    cfg.iterations = 50;
    let report = search(&mut d, &table, &cfg).unwrap();
    // Zero advantage means zero gradient, so the adaptive step never moves.
    assert_eq!(d.cores(), &before[..]);
    for r in &report.trajectory {
        assert!((r.reward_mean.unwrap() - 0.7).abs() < 1e-12);
        assert!((r.objective.unwrap() - 0.7).abs() < 1e-12);
    }
}

#[test]
fn deterministic_mode_climbs_monotonically() {
    let s = Arc::new(Supernet::chain("d", &vec![labels(2); 2]).unwrap());
    let table = Table::new(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]);
    let mut d = dist(&s, 2, 0);
    let mut cfg = SearchConfig::new(Mode::Deterministic);
    cfg.iterations = 500;
    cfg.learning_rate = Some(0.05);
    cfg.log_every = 1;
    let report = search(&mut d, &table, &cfg).unwrap();
    let objs: Vec<f64> = report.trajectory.iter().map(|r| r.objective.unwrap()).collect();
    assert!(objs.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    let (value, _) = d.expectation_grad(|i| if i.picks() == [0, 0] { 1.0 } else { 0.0 }).unwrap();
    assert!(value > 0.99, "{value}");
    assert_eq!(report.best_index, SubgraphIndex::new(vec![0, 0]));
    // table evaluated once, plus the final re-evaluation
    assert_eq!(report.evaluations_used, 5);
}

#[test]
fn reproducible_reports() {
    let (s, table, _) = planted();
    let run = || {
        let mut d = dist(&s, 2, 3);
        let mut cfg = SearchConfig::new(Mode::Stochastic);
        cfg.seed = 3;
        cfg.iterations = 60;
        search(&mut d, &table, &cfg).unwrap().deterministic_json()
    };
    assert_eq!(run(), run());
}

#[test]
fn early_stop_on_stable_argmax() {
    let (s, table, _) = planted();
    let mut d = dist(&s, 2, 0);
    let mut cfg = SearchConfig::new(Mode::Stochastic);
    cfg.iterations = 5000;
    cfg.log_every = 1;
    cfg.early_stop = EarlyStop::StableArgmax { k: 50 };
    let report = search(&mut d, &table, &cfg).unwrap();
    assert!(report.iterations_run < 5000);
    let tail = &report.trajectory[report.trajectory.len() - 51..];
    assert!(tail.iter().all(|r| r.argmax == tail[0].argmax));
}

#[test]
fn evaluator_failure_carries_iteration() {
    let (s, _, _) = planted();
    let mut d = dist(&s, 1, 0);
    let err = search(&mut d, &Failing, &SearchConfig::new(Mode::Stochastic)).unwrap_err();
    assert!(matches!(err, SearchError::Eval { iteration: 0, .. }));
}

#[test]
fn non_finite_reward_aborts() {
    let s = Arc::new(Supernet::chain("n", &vec![labels(2); 1]).unwrap());
    let table = Table::new(vec![2], vec![f64::NAN, 0.0]);
    let mut d = dist(&s, 1, 0);
    let err = search(&mut d, &table, &SearchConfig::new(Mode::Stochastic)).unwrap_err();
    assert!(matches!(err, SearchError::NonFinite { what: "reward", .. }));
}

#[test]
fn config_validation() {
    let mut cfg = SearchConfig::new(Mode::Stochastic);
    cfg.learning_rate = Some(0.0);
    assert!(cfg.validate().is_err());
    let mut cfg = SearchConfig::new(Mode::Stochastic);
    cfg.baseline_decay = 1.0;
    assert!(cfg.validate().is_err());
    let parsed: Result<SearchConfig, _> = serde_json::from_str(r#"{"iterations": 3}"#);
    assert!(parsed.unwrap_err().to_string().contains("mode"));
    let parsed: SearchConfig =
        serde_json::from_str(r#"{"mode":"deterministic","optimizer":{"kind":"plain_gradient"}}"#)
            .unwrap();
    assert_eq!(parsed.optimizer, OptimizerKind::PlainGradient);
    assert_eq!(parsed.effective_learning_rate(), 0.01);
}

#[test]
fn trajectory_csv_layout() {
    let (s, table, _) = planted();
    let mut d = dist(&s, 1, 0);
    let mut cfg = SearchConfig::new(Mode::Stochastic);
    cfg.iterations = 3;
    cfg.log_every = 1;
    let csv = search(&mut d, &table, &cfg).unwrap().trajectory_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "iter,reward_mean,objective,argmax_index");
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[1].split(',').count(), 4);
}

#[test]
fn baselines_zero_budget_is_an_error() {
    let (s, table, _) = planted();
    let mut cfg = SearchConfig::new(Mode::Stochastic);
    cfg.iterations = 0;
    let bc = BaselineConfig {
        search: cfg,
        trace_rank: 2,
        init: InitSpec::default(),
        seeds: vec![0],
    };
    assert!(matches!(
        compare_baselines(s, &table, &bc),
        Err(SearchError::Budget(_))
    ));
}

#[test]
fn baselines_on_planted_task() {
    let (s, table, _) = planted();
    let mut cfg = SearchConfig::new(Mode::Stochastic);
    cfg.iterations = 150;
    let bc = BaselineConfig {
        search: cfg,
        trace_rank: 2,
        init: InitSpec::default(),
        seeds: (0..5).collect(),
    };
    let rows = compare_baselines(s, &table, &bc).unwrap();
    assert_eq!(rows.len(), 3);
    let trace = &rows[0];
    let random = &rows[2];
    assert!(trace.mean >= random.mean, "{rows:?}");
}
