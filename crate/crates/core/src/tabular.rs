//! Table-lookup architecture benchmarks.
//!
//! Every subgraph of a small supernet has a precomputed validation and test
//! score. The search only ever reads validation scores; test scores are read
//! once, at finalization, and are used to report regret.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::search::{EvalError, TaskEvaluator};
use crate::supernet::{SubgraphIndex, Supernet, SupernetError};
use crate::tn::{CoreGrads, TnDistribution};

#[derive(Debug, thiserror::Error)]
pub enum TabularError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Malformed { line: u64, msg: String },
    #[error("line {line}: duplicate index {index}")]
    Duplicate { line: u64, index: SubgraphIndex },
    #[error("missing index {0}")]
    Missing(SubgraphIndex),
    #[error("line {line}: non-finite score")]
    NonFinite { line: u64 },
    #[error(transparent)]
    Supernet(#[from] SupernetError),
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkMetadata {
    pub name: String,
    pub source: String,
}

/// Complete val/test record over a supernet's index space, stored in
/// lexicographic (linear offset) order.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularBenchmark {
    supernet: Arc<Supernet>,
    val: Vec<f64>,
    test: Vec<f64>,
    radices: Vec<usize>,
    pub metadata: BenchmarkMetadata,
}

impl TabularBenchmark {
    pub fn new(
        supernet: Arc<Supernet>,
        val: Vec<f64>,
        test: Vec<f64>,
        metadata: BenchmarkMetadata,
    ) -> Result<Self, TabularError> {
        let n = supernet.enumerable_size(u64::MAX)? as usize;
        if val.len() != n || test.len() != n {
            return Err(TabularError::Spec(format!(
                "expected {n} scores, got {} val / {} test",
                val.len(),
                test.len()
            )));
        }
        if val.iter().chain(&test).any(|x| !x.is_finite()) {
            return Err(TabularError::Spec("scores must be finite".into()));
        }
        let radices = supernet.choice_counts();
        Ok(Self {
            supernet,
            val,
            test,
            radices,
            metadata,
        })
    }

    pub fn supernet(&self) -> &Arc<Supernet> {
        &self.supernet
    }

    pub fn len(&self) -> usize {
        self.val.len()
    }

    pub fn is_empty(&self) -> bool {
        self.val.is_empty()
    }

    fn offset(&self, idx: &SubgraphIndex) -> Option<usize> {
        self.supernet.validate_index(idx).ok()?;
        Some(idx.linear_offset(&self.radices))
    }

    pub fn val_score(&self, idx: &SubgraphIndex) -> Option<f64> {
        self.offset(idx).map(|o| self.val[o])
    }

    pub fn test_score(&self, idx: &SubgraphIndex) -> Option<f64> {
        self.offset(idx).map(|o| self.test[o])
    }

    pub fn val_scores(&self) -> &[f64] {
        &self.val
    }

    pub fn test_scores(&self) -> &[f64] {
        &self.test
    }

    pub fn index_at(&self, offset: usize) -> SubgraphIndex {
        SubgraphIndex::from_linear_offset(offset, &self.radices)
    }

    /// Index with the highest validation score; first in lexicographic order on ties.
    pub fn best_val_index(&self) -> SubgraphIndex {
        self.index_at(first_max(&self.val))
    }

    pub fn best_test_index(&self) -> SubgraphIndex {
        self.index_at(first_max(&self.test))
    }

    /// `max test - test(idx)`.
    pub fn regret(&self, idx: &SubgraphIndex) -> Option<f64> {
        let best = self.test.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        self.test_score(idx).map(|t| best - t)
    }

    /// Writes the `i_1,...,i_T,val,test` layout with 1-based indices.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TabularError> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.radices.len()).map(|t| format!("i_{t}")).collect();
        header.push("val".into());
        header.push("test".into());
        wr.write_record(&header).map_err(csv_io)?;
        for (o, (v, t)) in self.val.iter().zip(&self.test).enumerate() {
            let mut rec: Vec<String> = self.index_at(o).one_based().iter().map(|p| p.to_string()).collect();
            rec.push(v.to_string());
            rec.push(t.to_string());
            wr.write_record(&rec).map_err(csv_io)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), TabularError> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

fn csv_io(e: csv::Error) -> TabularError {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => TabularError::Io(e),
        k => TabularError::Malformed {
            line: 0,
            msg: format!("{k:?}"),
        },
    }
}

fn first_max(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Reads a benchmark CSV. When `supernet` is `None` a chain is built whose
/// choice counts are the per-column maxima.
pub fn load_benchmark_csv(path: &Path, supernet: Option<Arc<Supernet>>) -> Result<TabularBenchmark, TabularError> {
    let f = std::fs::File::open(path)?;
    let mut b = read_benchmark_csv(f, supernet)?;
    b.metadata.source = path.display().to_string();
    if let Some(stem) = path.file_stem() {
        b.metadata.name = stem.to_string_lossy().into_owned();
    }
    Ok(b)
}

pub fn read_benchmark_csv<R: Read>(r: R, supernet: Option<Arc<Supernet>>) -> Result<TabularBenchmark, TabularError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut records = rd.records();
    let header = match records.next() {
        None => return Err(TabularError::Malformed { line: 1, msg: "empty file".into() }),
        Some(h) => h.map_err(|e| malformed_csv(e, 1))?,
    };
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    let t = cols.len().checked_sub(2).filter(|&t| t >= 1).ok_or(TabularError::Malformed {
        line: 1,
        msg: "header needs i_1..i_T,val,test".into(),
    })?;
    for (k, c) in cols[..t].iter().enumerate() {
        if *c != format!("i_{}", k + 1) {
            return Err(TabularError::Malformed {
                line: 1,
                msg: format!("expected column i_{}, found {c:?}", k + 1),
            });
        }
    }
    if cols[t] != "val" || cols[t + 1] != "test" {
        return Err(TabularError::Malformed {
            line: 1,
            msg: "last two columns must be val,test".into(),
        });
    }

    let mut rows: Vec<(u64, Vec<usize>, f64, f64)> = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| malformed_csv(e, 0))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != t + 2 {
            return Err(TabularError::Malformed {
                line,
                msg: format!("expected {} fields, found {}", t + 2, rec.len()),
            });
        }
        let mut picks = Vec::with_capacity(t);
        for k in 0..t {
            let s = rec[k].trim();
            match s.parse::<usize>() {
                Ok(p) if p >= 1 => picks.push(p),
                _ => {
                    return Err(TabularError::Malformed {
                        line,
                        msg: format!("i_{}: bad index {s:?}", k + 1),
                    })
                }
            }
        }
        let num = |k: usize, name: &str| -> Result<f64, TabularError> {
            let s = rec[k].trim();
            let x: f64 = s.parse().map_err(|_| TabularError::Malformed {
                line,
                msg: format!("{name}: bad number {s:?}"),
            })?;
            if !x.is_finite() {
                return Err(TabularError::NonFinite { line });
            }
            Ok(x)
        };
        let v = num(t, "val")?;
        let te = num(t + 1, "test")?;
        rows.push((line, picks, v, te));
    }

    let supernet = match supernet {
        Some(s) => {
            if s.num_edges() != t {
                return Err(TabularError::Malformed {
                    line: 1,
                    msg: format!("supernet has {} edges, CSV has {t} index columns", s.num_edges()),
                });
            }
            s
        }
        None => {
            let mut counts = vec![1usize; t];
            for (_, p, _, _) in &rows {
                for (c, &x) in counts.iter_mut().zip(p) {
                    *c = (*c).max(x);
                }
            }
            let choices: Vec<Vec<String>> =
                counts.iter().map(|&c| (1..=c).map(|k| format!("op{k}")).collect()).collect();
            Arc::new(Supernet::chain("benchmark", &choices)?)
        }
    };
    let radices = supernet.choice_counts();
    let n = supernet.enumerable_size(u64::MAX)? as usize;
    let mut val = vec![f64::NAN; n];
    let mut test = vec![f64::NAN; n];
    let mut seen = vec![false; n];
    for (line, picks, v, te) in rows {
        let idx = SubgraphIndex::from_one_based(&picks).expect("picks are >= 1");
        supernet.validate_index(&idx).map_err(|e| TabularError::Malformed {
            line,
            msg: e.to_string(),
        })?;
        let o = idx.linear_offset(&radices);
        if seen[o] {
            return Err(TabularError::Duplicate { line, index: idx });
        }
        seen[o] = true;
        val[o] = v;
        test[o] = te;
    }
    if let Some(o) = seen.iter().position(|s| !s) {
        return Err(TabularError::Missing(SubgraphIndex::from_linear_offset(o, &radices)));
    }
    TabularBenchmark::new(
        supernet,
        val,
        test,
        BenchmarkMetadata {
            name: "benchmark".into(),
            source: "csv".into(),
        },
    )
}

fn malformed_csv(e: csv::Error, fallback_line: u64) -> TabularError {
    let line = e.position().map(|p| p.line()).unwrap_or(fallback_line);
    TabularError::Malformed {
        line,
        msg: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    #[default]
    Chain,
    Ring,
    Star,
}

impl Topology {
    pub fn build(self, name: &str, choices: &[Vec<String>]) -> Result<Supernet, SupernetError> {
        match self {
            Topology::Chain => Supernet::chain(name, choices),
            Topology::Ring => Supernet::ring(name, choices),
            Topology::Star => Supernet::star(name, choices),
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Topology::Chain => "chain",
            Topology::Ring => "ring",
            Topology::Star => "star",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Correlation {
    #[default]
    Independent,
    /// Adds `strength` for every pair of node-sharing edges that both take
    /// their planted choice.
    Pairwise { strength: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub choices: Vec<usize>,
    #[serde(default)]
    pub topology: Topology,
    /// 1-based in serialized form.
    pub planted: SubgraphIndex,
    pub gap: f64,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub correlation: Correlation,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    /// Whether `gap > 2 * noise_sd`.
    pub fn well_separated(&self) -> bool {
        self.gap > 2.0 * self.noise_sd
    }
}

/// Enumeration limit for synthetic tables.
pub const SYNTHETIC_CAP: u64 = 1 << 24;

/// Builds a frozen table: base uniform(0, 0.5), plus the pairwise bonus, plus
/// Gaussian noise; the planted index then gets `max(others) + gap` in both
/// columns.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<TabularBenchmark, TabularError> {
    if spec.choices.is_empty() || spec.choices.contains(&0) {
        return Err(TabularError::Spec("every edge needs at least one choice".into()));
    }
    if !(spec.gap > 0.0) || !(spec.noise_sd >= 0.0) {
        return Err(TabularError::Spec("gap must be > 0 and noise_sd >= 0".into()));
    }
    let labels: Vec<Vec<String>> =
        spec.choices.iter().map(|&c| (0..c).map(|k| format!("op{k}")).collect()).collect();
    let supernet = Arc::new(spec.topology.build("synthetic", &labels)?);
    supernet.validate_index(&spec.planted)?;
    let n = supernet.enumerable_size(SYNTHETIC_CAP)? as usize;
    let radices = supernet.choice_counts();

    let pairs: Vec<(usize, usize)> = {
        let e = supernet.edges();
        let mut p = Vec::new();
        for a in 0..e.len() {
            for b in a + 1..e.len() {
                let shared = [e[a].u, e[a].v].iter().any(|x| *x == e[b].u || *x == e[b].v);
                if shared {
                    p.push((a, b));
                }
            }
        }
        p
    };
    let strength = match spec.correlation {
        Correlation::Independent => 0.0,
        Correlation::Pairwise { strength } => strength,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| TabularError::Spec(e.to_string()))?;
    let target = spec.planted.picks();
    let column = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n)
            .map(|o| {
                let idx = SubgraphIndex::from_linear_offset(o, &radices);
                let p = idx.picks();
                let matches = pairs
                    .iter()
                    .filter(|(a, b)| p[*a] == target[*a] && p[*b] == target[*b])
                    .count();
                rng.random_range(0.0..0.5) + strength * matches as f64 + noise.sample(rng)
            })
            .collect()
    };
    let mut val = column(&mut rng);
    let mut test = column(&mut rng);
    let planted = spec.planted.linear_offset(&radices);
    for col in [&mut val, &mut test] {
        let others = col
            .iter()
            .enumerate()
            .filter(|(o, _)| *o != planted)
            .map(|(_, &x)| x)
            .fold(f64::NEG_INFINITY, f64::max);
        // singleton space: nothing to beat
        col[planted] = if others.is_finite() { others + spec.gap } else { spec.gap };
    }
    TabularBenchmark::new(
        supernet,
        val,
        test,
        BenchmarkMetadata {
            name: format!("synthetic-{}", spec.seed),
            source: "generate_synthetic".into(),
        },
    )
}

/// Lookup evaluator that counts val and test reads separately.
pub struct TabularEvaluator {
    bench: Arc<TabularBenchmark>,
    val_reads: AtomicU64,
    test_reads: AtomicU64,
}

impl TabularEvaluator {
    pub fn new(bench: Arc<TabularBenchmark>) -> Self {
        Self {
            bench,
            val_reads: AtomicU64::new(0),
            test_reads: AtomicU64::new(0),
        }
    }

    pub fn benchmark(&self) -> &Arc<TabularBenchmark> {
        &self.bench
    }

    pub fn val_reads(&self) -> u64 {
        self.val_reads.load(Ordering::Relaxed)
    }

    pub fn test_reads(&self) -> u64 {
        self.test_reads.load(Ordering::Relaxed)
    }
}

impl TabularBenchmark {
    pub fn as_evaluator(self: &Arc<Self>) -> TabularEvaluator {
        TabularEvaluator::new(self.clone())
    }
}

impl TaskEvaluator for TabularEvaluator {
    fn evaluate(&self, idx: &SubgraphIndex) -> Result<f64, EvalError> {
        self.val_reads.fetch_add(1, Ordering::Relaxed);
        self.bench
            .val_score(idx)
            .ok_or_else(|| EvalError(format!("unknown index {idx}")))
    }

    fn has_relaxed_objective(&self) -> bool {
        true
    }

    fn relaxed_objective(&self, d: &TnDistribution) -> Option<Result<(f64, CoreGrads), EvalError>> {
        if d.supernet().choice_counts() != self.bench.radices {
            return Some(Err(EvalError("distribution does not match the benchmark supernet".into())));
        }
        let radices = &self.bench.radices;
        let val = &self.bench.val;
        self.val_reads.fetch_add(val.len() as u64, Ordering::Relaxed);
        Some(
            d.expectation_grad(|idx| val[idx.linear_offset(radices)])
                .map_err(|e| EvalError(e.to_string())),
        )
    }

    fn final_evaluate(&self, idx: &SubgraphIndex) -> Option<Result<f64, EvalError>> {
        self.test_reads.fetch_add(1, Ordering::Relaxed);
        Some(
            self.bench
                .test_score(idx)
                .ok_or_else(|| EvalError(format!("unknown index {idx}"))),
        )
    }

    fn concurrency_safe(&self) -> bool {
        true
    }
}
