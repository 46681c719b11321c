//! The search loop: sample or relax, differentiate, ascend, then extract the
//! most probable subgraph and re-evaluate it.
//!
//! In stochastic mode each step draws `samples_per_step` subgraphs, scores
//! them, and ascends the score-function estimate
//! `mean_k (reward_k - b) * grad log P(idx_k)` with an exponential moving
//! average baseline `b`. In deterministic mode each step ascends the exact
//! gradient of the evaluator's relaxed objective, or of the exact expected
//! reward when the space is enumerable.
//!
//! The engine never sees model weights; any inner training problem lives
//! behind [`TaskEvaluator`].

mod baselines;
mod optimizer;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::supernet::{SubgraphIndex, SupernetError};
use crate::tn::{CoreGrads, TnDistribution, TnError};

pub use baselines::{compare_baselines, random_search, BaselineConfig, BaselineRow};
pub use optimizer::{update_step, OptimizerKind, OptimizerState};

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct EvalError(pub String);

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error(transparent)]
    Tn(#[from] TnError),
    #[error("iteration {iteration}: evaluator failed: {source}")]
    Eval {
        iteration: usize,
        #[source]
        source: EvalError,
    },
    #[error("iteration {iteration}: non-finite {what}")]
    NonFinite { iteration: usize, what: &'static str },
    #[error("invalid search config: {0}")]
    Config(String),
    #[error("gradient shape does not match cores")]
    Shape,
    #[error("argmax {got} disagrees with the enumeration oracle {oracle}")]
    ArgmaxMismatch { got: SubgraphIndex, oracle: SubgraphIndex },
    #[error("budget: {0}")]
    Budget(String),
}

/// Scores subgraphs for the search loop. Higher is better.
pub trait TaskEvaluator: Sync {
    /// Validation reward; deterministic in `idx`.
    fn evaluate(&self, idx: &SubgraphIndex) -> Result<f64, EvalError>;

    /// Whether [`Self::relaxed_objective`] returns `Some`.
    fn has_relaxed_objective(&self) -> bool {
        false
    }

    /// Differentiable objective over the whole distribution, if the task has one.
    fn relaxed_objective(&self, _d: &TnDistribution) -> Option<Result<(f64, CoreGrads), EvalError>> {
        None
    }

    /// Test-time metric used once, after the search.
    fn final_evaluate(&self, _idx: &SubgraphIndex) -> Option<Result<f64, EvalError>> {
        None
    }

    /// Whether `evaluate` may be called from several threads at once.
    fn concurrency_safe(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Stochastic,
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EarlyStop {
    #[default]
    None,
    /// Stop once the argmax is unchanged for `k` consecutive log checks.
    StableArgmax { k: usize },
}

fn default_iterations() -> usize {
    300
}
fn default_samples() -> usize {
    4
}
fn default_decay() -> f64 {
    0.9
}
fn default_log_every() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub mode: Mode,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_samples")]
    pub samples_per_step: usize,
    /// Defaults to 0.05 in stochastic mode and 0.01 in deterministic mode.
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_decay")]
    pub baseline_decay: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub early_stop: EarlyStop,
    /// Write a checkpoint every this many steps; zero disables.
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl SearchConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            iterations: default_iterations(),
            samples_per_step: default_samples(),
            learning_rate: None,
            optimizer: OptimizerKind::default(),
            baseline_decay: default_decay(),
            seed: 0,
            log_every: default_log_every(),
            early_stop: EarlyStop::None,
            checkpoint_every: 0,
        }
    }

    pub fn effective_learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or(match self.mode {
            Mode::Stochastic => 0.05,
            Mode::Deterministic => 0.01,
        })
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if self.iterations == 0 {
            return Err(SearchError::Config("iterations must be positive".into()));
        }
        if self.mode == Mode::Stochastic && self.samples_per_step == 0 {
            return Err(SearchError::Config("samples_per_step must be positive".into()));
        }
        if self.log_every == 0 {
            return Err(SearchError::Config("log_every must be positive".into()));
        }
        let lr = self.effective_learning_rate();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(SearchError::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(SearchError::Config("baseline_decay must lie in [0, 1)".into()));
        }
        if let EarlyStop::StableArgmax { k: 0 } = self.early_stop {
            return Err(SearchError::Config("early_stop k must be positive".into()));
        }
        if let OptimizerKind::AdaptiveMoments { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return Err(SearchError::Config("invalid adaptive-moment parameters".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mean sampled reward (stochastic mode only).
    pub reward_mean: Option<f64>,
    /// Relaxed objective (deterministic) or moving baseline (stochastic).
    pub objective: Option<f64>,
    pub entropy_proxy: f64,
    pub argmax: SubgraphIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub mode: Mode,
    pub best_index: SubgraphIndex,
    pub best_labels: Vec<String>,
    pub best_probability: f64,
    pub argmax_exact: bool,
    pub best_score: f64,
    pub iterations_run: usize,
    pub evaluations_used: u64,
    pub trajectory: Vec<IterationRecord>,
    pub wall_time: f64,
}

impl SearchReport {
    /// `iter,reward_mean,objective,argmax_index`; missing values are empty.
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("iter,reward_mean,objective,argmax_index\n");
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.trajectory {
            let idx: Vec<String> = r.argmax.one_based().iter().map(|p| p.to_string()).collect();
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.iteration,
                fmt(r.reward_mean),
                fmt(r.objective),
                idx.join("-")
            ));
        }
        out
    }

    /// The JSON report with `wall_time` removed, for reproducibility checks.
    pub fn deterministic_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("wall_time");
        }
        serde_json::to_string(&v).expect("report serializes")
    }
}

/// What an observer sees after each update.
pub struct StepView<'a> {
    pub iteration: usize,
    pub distribution: &'a TnDistribution,
    pub optimizer: &'a OptimizerState,
}

/// Runs the search, mutating `d` in place.
pub fn search(
    d: &mut TnDistribution,
    eval: &dyn TaskEvaluator,
    cfg: &SearchConfig,
) -> Result<SearchReport, SearchError> {
    search_with_observer(d, eval, cfg, &mut |_| Ok(()))
}

pub fn search_with_observer(
    d: &mut TnDistribution,
    eval: &dyn TaskEvaluator,
    cfg: &SearchConfig,
    observer: &mut dyn FnMut(&StepView<'_>) -> Result<(), SearchError>,
) -> Result<SearchReport, SearchError> {
    cfg.validate()?;
    let start = Instant::now();
    let lr = cfg.effective_learning_rate();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt_state = OptimizerState::default();
    let mut baseline: Option<f64> = None;
    let mut evaluations: u64 = 0;
    let mut trajectory = Vec::new();
    let mut last_argmax: Option<SubgraphIndex> = None;
    let mut stable_checks = 0usize;
    let mut iterations_run = 0;

    // Deterministic mode without a relaxed objective: exact expectation over a
    // reward table evaluated once.
    let mut reward_table: Option<Vec<f64>> = None;
    if cfg.mode == Mode::Deterministic && !eval.has_relaxed_objective() {
        let indices: Vec<SubgraphIndex> = d
            .supernet()
            .enumerate_indices(d.caps().enumeration)
            .map_err(|e| match e {
                SupernetError::CapExceeded { .. } => SearchError::Config(
                    "deterministic mode needs a relaxed objective or an enumerable space".into(),
                ),
                e => SearchError::Tn(e.into()),
            })?
            .collect();
        let table = evaluate_all(eval, &indices, 0)?;
        evaluations += table.len() as u64;
        reward_table = Some(table);
    }
    let radices = d.supernet().choice_counts();

    for it in 0..cfg.iterations {
        let (grad, reward_mean, objective) = match cfg.mode {
            Mode::Stochastic => {
                let mut sampler = d.sampler();
                let samples = (0..cfg.samples_per_step)
                    .map(|_| sampler.sample(&mut rng))
                    .collect::<Result<Vec<_>, _>>()?;
                let rewards = evaluate_all(eval, &samples, it)?;
                evaluations += rewards.len() as u64;
                if rewards.iter().any(|r| !r.is_finite()) {
                    return Err(SearchError::NonFinite { iteration: it, what: "reward" });
                }
                let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
                let b = match baseline {
                    None => mean,
                    Some(b) => cfg.baseline_decay * b + (1.0 - cfg.baseline_decay) * mean,
                };
                baseline = Some(b);
                let mut grad = CoreGrads::zeros_like(d.cores());
                let scale = 1.0 / samples.len() as f64;
                for (idx, r) in samples.iter().zip(&rewards) {
                    let adv = r - b;
                    if adv != 0.0 {
                        grad.add_scaled(&d.log_prob_grad(idx)?, adv * scale);
                    }
                }
                (grad, Some(mean), Some(b))
            }
            Mode::Deterministic => {
                let (value, grad) = match &reward_table {
                    Some(table) => {
                        d.expectation_grad(|idx| table[idx.linear_offset(&radices)])?
                    }
                    None => eval
                        .relaxed_objective(d)
                        .ok_or_else(|| SearchError::Config("evaluator has no relaxed objective".into()))?
                        .map_err(|source| SearchError::Eval { iteration: it, source })?,
                };
                if !value.is_finite() {
                    return Err(SearchError::NonFinite { iteration: it, what: "objective" });
                }
                (grad, None, Some(value))
            }
        };
        if !grad.is_finite() {
            return Err(SearchError::NonFinite { iteration: it, what: "gradient" });
        }
        d.update_cores(|cores| {
            // shapes come from the same cores; a mismatch here is a bug
            update_step(cores, &grad, &mut opt_state, &cfg.optimizer, lr)
                .expect("gradient shaped like cores");
        })
        .map_err(|e| match e {
            TnError::NonFinite { .. } => SearchError::NonFinite { iteration: it, what: "parameters" },
            e => e.into(),
        })?;
        iterations_run = it + 1;
        observer(&StepView {
            iteration: it + 1,
            distribution: d,
            optimizer: &opt_state,
        })?;

        if it % cfg.log_every == 0 || it + 1 == cfg.iterations {
            let argmax = d.argmax()?.index;
            trajectory.push(IterationRecord {
                iteration: it,
                reward_mean,
                objective,
                entropy_proxy: d.entropy_proxy()?,
                argmax: argmax.clone(),
            });
            if let EarlyStop::StableArgmax { k } = cfg.early_stop {
                if last_argmax.as_ref() == Some(&argmax) {
                    stable_checks += 1;
                } else {
                    stable_checks = 0;
                }
                last_argmax = Some(argmax);
                if stable_checks >= k {
                    break;
                }
            }
        }
    }

    let am = d.argmax()?;
    if am.exact {
        check_against_oracle(d, &am.index)?;
    }
    let best_score = match eval.final_evaluate(&am.index) {
        Some(r) => r,
        None => eval.evaluate(&am.index),
    }
    .map_err(|source| SearchError::Eval {
        iteration: iterations_run,
        source,
    })?;
    evaluations += 1;

    Ok(SearchReport {
        mode: cfg.mode,
        best_labels: d
            .supernet()
            .labels(&am.index)
            .into_iter()
            .map(String::from)
            .collect(),
        best_index: am.index,
        best_probability: am.probability,
        argmax_exact: am.exact,
        best_score,
        iterations_run,
        evaluations_used: evaluations,
        trajectory,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

fn evaluate_all(
    eval: &dyn TaskEvaluator,
    indices: &[SubgraphIndex],
    iteration: usize,
) -> Result<Vec<f64>, SearchError> {
    let wrap = |source| SearchError::Eval { iteration, source };
    if eval.concurrency_safe() && indices.len() > 1 {
        indices
            .par_iter()
            .map(|i| eval.evaluate(i).map_err(wrap))
            .collect()
    } else {
        indices.iter().map(|i| eval.evaluate(i).map_err(wrap)).collect()
    }
}

/// Compares an argmax against the brute-force materialized tensor, when
/// the tensor fits within the caps.
fn check_against_oracle(d: &TnDistribution, got: &SubgraphIndex) -> Result<(), SearchError> {
    let full = match d.materialize() {
        Ok(f) => f,
        Err(TnError::CapExceeded { .. }) | Err(TnError::Supernet(SupernetError::CapExceeded { .. })) => {
            return Ok(())
        }
        Err(e) => return Err(e.into()),
    };
    let radices = d.supernet().choice_counts();
    let (best_off, best) = full
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (o, &p)| if p > acc.1 { (o, p) } else { acc });
    let p_got = full[got.linear_offset(&radices)];
    if p_got < best - 1e-12 * best.max(1e-300) - 1e-15 {
        return Err(SearchError::ArgmaxMismatch {
            got: got.clone(),
            oracle: SubgraphIndex::from_linear_offset(best_off, &radices),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests;
