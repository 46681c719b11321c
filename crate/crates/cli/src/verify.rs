use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tnsupernet::tn::normalized_core;
use tnsupernet::{InitSpec, RankMap, Supernet, TnDistribution, TnError};

use crate::error::{CliError, CliResult};

pub const NORMALIZATION_TOL: f64 = 1e-10;
pub const RANK1_TOL: f64 = 1e-14;
pub const GRADIENT_TOL: f64 = 1e-5;
const FD_STEP: f64 = 1e-5;

pub struct CheckLine {
    pub name: &'static str,
    pub value: Option<f64>,
    pub tol: f64,
}

impl CheckLine {
    pub fn passed(&self) -> bool {
        self.value.is_none_or(|v| v < self.tol)
    }

    pub fn render(&self) -> String {
        match self.value {
            Some(v) => format!(
                "check={} residual={v:.3e} tol={:.0e} status={}",
                self.name,
                self.tol,
                if self.passed() { "pass" } else { "fail" }
            ),
            None => format!("check={} status=skipped", self.name),
        }
    }
}

fn is_cap(e: &TnError) -> bool {
    matches!(
        e,
        TnError::CapExceeded { .. } | TnError::Supernet(tnsupernet::SupernetError::CapExceeded { .. })
    )
}

/// Runs the self-checks; `corrupt` perturbs analytic gradients.
pub fn run_checks(supernet: Arc<Supernet>, rank: usize, seed: u64, corrupt: bool) -> CliResult<Vec<CheckLine>> {
    let init = InitSpec::Gaussian { sd: 1.0 };
    let d = TnDistribution::init(supernet.clone(), RankMap::uniform(&supernet, rank)?, init, seed)?;
    let mut out = Vec::new();

    let norm = match d.materialize() {
        Ok(t) => Some((t.iter().sum::<f64>() - 1.0).abs()),
        Err(e) if is_cap(&e) => None,
        Err(e) => return Err(e.into()),
    };
    out.push(CheckLine { name: "normalization", value: norm, tol: NORMALIZATION_TOL });

    let d1 = TnDistribution::init(supernet.clone(), RankMap::uniform(&supernet, 1)?, init, seed)?;
    let rank1 = match d1.materialize() {
        Ok(t) => {
            let radices = supernet.choice_counts();
            let soft: Vec<Vec<f64>> = d1.cores().iter().map(|c| normalized_core(c).values().to_vec()).collect();
            let mut worst: f64 = 0.0;
            for (o, &p) in t.iter().enumerate() {
                let idx = tnsupernet::SubgraphIndex::from_linear_offset(o, &radices);
                let q: f64 = idx.picks().iter().enumerate().map(|(e, &i)| soft[e][i]).product();
                worst = worst.max((p - q).abs());
            }
            Some(worst)
        }
        Err(e) if is_cap(&e) => None,
        Err(e) => return Err(e.into()),
    };
    out.push(CheckLine { name: "rank1_factorization", value: rank1, tol: RANK1_TOL });

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let counts = supernet.choice_counts();
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let idx = tnsupernet::SubgraphIndex::new(counts.iter().map(|&c| rng.random_range(0..c)).collect());
        let mut g = d.log_prob_grad(&idx)?;
        if corrupt {
            g.0.iter_mut().flatten().for_each(|x| *x += 1e-3);
        }
        let f = |e: &TnDistribution| e.prob(&idx).map(f64::ln);
        worst = worst.max(fd_residual(&d, &g.0, f, &mut rng, 20)?);
    }
    out.push(CheckLine { name: "log_prob_grad", value: Some(worst), tol: GRADIENT_TOL });

    let expectation = match supernet.enumerable_size(d.caps().enumeration) {
        Ok(n) => {
            let table: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let score = |i: &tnsupernet::SubgraphIndex| table[i.linear_offset(&counts)];
            let (_, mut g) = d.expectation_grad(score)?;
            if corrupt {
                g.0.iter_mut().flatten().for_each(|x| *x += 1e-3);
            }
            let f = |e: &TnDistribution| e.expectation_grad(score).map(|r| r.0);
            Some(fd_residual(&d, &g.0, f, &mut rng, 20)?)
        }
        Err(_) => None,
    };
    out.push(CheckLine { name: "expectation_grad", value: expectation, tol: GRADIENT_TOL });
    Ok(out)
}

/// Worst relative error of `grad` against central differences on `n` random coordinates.
fn fd_residual<F>(d: &TnDistribution, grad: &[Vec<f64>], f: F, rng: &mut ChaCha8Rng, n: usize) -> CliResult<f64>
where
    F: Fn(&TnDistribution) -> Result<f64, TnError>,
{
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let t = rng.random_range(0..grad.len());
        let k = rng.random_range(0..grad[t].len());
        let shifted = |h: f64| -> CliResult<f64> {
            let mut e = d.clone();
            e.update_cores(|c| c[t].values_mut()[k] += h)?;
            Ok(f(&e)?)
        };
        let fd = (shifted(FD_STEP)? - shifted(-FD_STEP)?) / (2.0 * FD_STEP);
        let an = grad[t][k];
        worst = worst.max((fd - an).abs() / an.abs().max(fd.abs()).max(1e-3));
    }
    Ok(worst)
}

pub fn verdict(lines: &[CheckLine]) -> CliResult<()> {
    let failed: Vec<&str> = lines.iter().filter(|l| !l.passed()).map(|l| l.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::numerical(format!("verification failed: {}", failed.join(","))))
    }
}
