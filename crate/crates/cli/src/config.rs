use std::path::Path;

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use tnsupernet::relational::ChainOptions;
use tnsupernet::search::SearchConfig;
use tnsupernet::InitSpec;

use crate::error::{io_data, CliError, CliResult};

/// Flags that override run-config keys.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// stochastic | deterministic
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub samples_per_step: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Uniform node rank R_n.
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub log_every: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KgSection {
    pub target: Option<String>,
    pub chain_length: usize,
    pub include_identity: bool,
    pub exclude_target: bool,
    pub clamp: bool,
    pub filtered: bool,
    pub top_k: usize,
}

impl Default for KgSection {
    fn default() -> Self {
        let c = ChainOptions::default();
        Self {
            target: None,
            chain_length: c.chain_length,
            include_identity: c.include_identity,
            exclude_target: c.exclude_target,
            clamp: c.clamp,
            filtered: true,
            top_k: 10,
        }
    }
}

impl KgSection {
    pub fn chain_options(&self) -> ChainOptions {
        ChainOptions {
            chain_length: self.chain_length,
            include_identity: self.include_identity,
            exclude_target: self.exclude_target,
            clamp: self.clamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub search: SearchConfig,
    pub rank: usize,
    pub init: InitSpec,
    pub kg: KgSection,
}

pub const DEFAULT_RANK: usize = 2;

impl RunConfig {
    /// Effective configuration, re-loadable by [`RunConfig::from_value`].
    pub fn snapshot(&self) -> Value {
        let mut v = serde_json::to_value(&self.search).expect("config serializes");
        let m = v.as_object_mut().expect("struct serializes to an object");
        m.insert("rank".into(), self.rank.into());
        m.insert("init".into(), serde_json::to_value(self.init).expect("init serializes"));
        m.insert("kg".into(), serde_json::to_value(&self.kg).expect("kg serializes"));
        v
    }

    pub fn from_value(mut v: Value) -> CliResult<Self> {
        let m = v
            .as_object_mut()
            .ok_or_else(|| CliError::config("run config must be a table/object"))?;
        let rank = match m.remove("rank") {
            None => DEFAULT_RANK,
            Some(r) => r
                .as_u64()
                .filter(|&r| r >= 1)
                .ok_or_else(|| CliError::config("key `rank` must be a positive integer"))? as usize,
        };
        let init = match m.remove("init") {
            None => InitSpec::default(),
            Some(i) => serde_json::from_value(i).map_err(|e| CliError::config(format!("key `init`: {e}")))?,
        };
        let kg = match m.remove("kg") {
            None => KgSection::default(),
            Some(k) => serde_json::from_value(k).map_err(|e| CliError::config(format!("key `kg`: {e}")))?,
        };
        let search: SearchConfig = serde_json::from_value(v).map_err(|e| CliError::config(e.to_string()))?;
        search.validate()?;
        Ok(Self { search, rank, init, kg })
    }

    pub fn load(path: Option<&Path>, o: &Overrides) -> CliResult<Self> {
        let mut v = match path {
            None => Value::Object(Map::new()),
            Some(p) => read_structured(p)?,
        };
        apply_overrides(&mut v, o)?;
        Self::from_value(v)
    }
}

/// Parses TOML or JSON by extension; anything but `.json` is read as TOML.
pub fn read_structured(path: &Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| io_data(path, e))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    } else {
        let t: toml::Value =
            toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message())))?;
        serde_json::to_value(t).map_err(|e| CliError::config(e.to_string()))
    }
}

/// Deserializes a TOML/JSON file into `T`, naming the file in errors.
pub fn read_typed<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let v = read_structured(path)?;
    serde_json::from_value(v).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn apply_overrides(v: &mut Value, o: &Overrides) -> CliResult<()> {
    let m = v
        .as_object_mut()
        .ok_or_else(|| CliError::config("run config must be a table/object"))?;
    let mut set = |k: &str, x: Option<Value>| {
        if let Some(x) = x {
            m.insert(k.to_string(), x);
        }
    };
    set("mode", o.mode.clone().map(Value::from));
    set("iterations", o.iterations.map(Value::from));
    set("samples_per_step", o.samples_per_step.map(Value::from));
    set("learning_rate", o.learning_rate.map(Value::from));
    set("seed", o.seed.map(Value::from));
    set("rank", o.rank.map(Value::from));
    set("log_every", o.log_every.map(Value::from));
    set("checkpoint_every", o.checkpoint_every.map(Value::from));
    Ok(())
}
