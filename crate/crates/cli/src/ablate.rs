use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;
use tnsupernet::search::search;

use crate::config::Overrides;
use crate::error::{CliError, CliResult};
use crate::run::{fresh_distribution, with_seed, write_file, Task};
use crate::TaskArgs;

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    task: TaskArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Node ranks to sweep, comma separated [default when no --encodings: 1,2,3,4].
    #[arg(long)]
    ranks: Option<String>,
    /// Encodings to compare: rank1, trace.
    #[arg(long)]
    encodings: Option<String>,
    /// Seeds per variant, counting up from the config seed.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Output CSV.
    #[arg(long, default_value = "ablation.csv")]
    out: PathBuf,
}

fn split_list(s: &str) -> Vec<&str> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).collect()
}

/// `(variant name, rank)` pairs in output order.
pub fn variants(ranks: Option<&str>, encodings: Option<&str>, trace_rank: usize) -> CliResult<Vec<(String, usize)>> {
    let mut out = Vec::new();
    let ranks = match (ranks, encodings) {
        (None, None) => Some("1,2,3,4"),
        (r, _) => r,
    };
    if let Some(r) = ranks {
        let list = split_list(r);
        if list.is_empty() {
            return Err(CliError::config("empty rank list"));
        }
        for x in list {
            let n: usize = x
                .parse()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| CliError::config(format!("rank {x:?} is not a positive integer")))?;
            out.push((format!("r{n}"), n));
        }
    }
    if let Some(e) = encodings {
        let list = split_list(e);
        if list.is_empty() {
            return Err(CliError::config("empty encoding list"));
        }
        for x in list {
            match x {
                "rank1" => out.push(("rank1".into(), 1)),
                "trace" => out.push(("trace".into(), trace_rank)),
                _ => return Err(CliError::config(format!("unknown encoding {x:?}; expected rank1 or trace"))),
            }
        }
    }
    Ok(out)
}

pub fn cmd_ablate(a: &AblateArgs) -> CliResult<()> {
    let cfg = a.task.run_config(a.config.as_deref(), &a.overrides)?;
    let vars = variants(a.ranks.as_deref(), a.encodings.as_deref(), cfg.rank)?;
    if a.seeds == 0 {
        return Err(CliError::config("--seeds must be at least 1"));
    }
    let task = Task::load(&a.task.inputs(None)?, &cfg.kg)?;
    let supernet = task.supernet();
    let jobs: Vec<(usize, u64)> = (0..vars.len())
        .flat_map(|v| (0..a.seeds).map(move |k| (v, cfg.search.seed + k)))
        .collect();
    let run_one = |&(v, seed): &(usize, u64)| -> CliResult<f64> {
        let mut d = fresh_distribution(supernet.clone(), &cfg, vars[v].1, seed)?;
        let eval = task.evaluator();
        Ok(search(&mut d, eval.as_ref(), &with_seed(&cfg.search, seed))?.best_score)
    };
    let scores: Vec<CliResult<f64>> = if task.evaluator().concurrency_safe() {
        jobs.par_iter().map(run_one).collect()
    } else {
        jobs.iter().map(run_one).collect()
    };
    let mut csv = String::from("variant,seed,final_score\n");
    for ((v, seed), s) in jobs.iter().zip(scores) {
        csv.push_str(&format!("{},{seed},{}\n", vars[*v].0, s?));
    }
    write_file(&a.out, &csv)?;
    print!("{csv}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sweep_is_one_to_four() {
        let v = variants(None, None, 2).unwrap();
        assert_eq!(v.iter().map(|x| x.1).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn encodings_only() {
        let v = variants(None, Some("rank1,trace"), 3).unwrap();
        assert_eq!(v, vec![("rank1".to_string(), 1), ("trace".to_string(), 3)]);
    }

    #[test]
    fn empty_rank_list_is_a_config_error() {
        let e = variants(Some(""), None, 2).unwrap_err();
        assert_eq!(e.kind.exit_code(), 1);
        assert!(variants(Some("0"), None, 2).is_err());
        assert!(variants(None, Some("darts"), 2).is_err());
    }
}
