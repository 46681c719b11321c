use std::fmt;

use tnsupernet::relational::RelationalError;
use tnsupernet::search::SearchError;
use tnsupernet::tabular::TabularError;
use tnsupernet::{SupernetError, TnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Data,
    Numerical,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Config => 1,
            Kind::Data => 2,
            Kind::Numerical => 3,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::Config => "config",
            Kind::Data => "data",
            Kind::Numerical => "numerical",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(m: impl Into<String>) -> Self {
        Self { kind: Kind::Config, message: m.into() }
    }

    pub fn data(m: impl Into<String>) -> Self {
        Self { kind: Kind::Data, message: m.into() }
    }

    pub fn numerical(m: impl Into<String>) -> Self {
        Self { kind: Kind::Numerical, message: m.into() }
    }

    /// `error kind=<kind> exit=<code> message=<json string>`
    pub fn diagnostic(&self) -> String {
        format!(
            "error kind={} exit={} message={}",
            self.kind.name(),
            self.kind.exit_code(),
            serde_json::to_string(&self.message).expect("strings serialize")
        )
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub fn io_data(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::data(format!("{}: {e}", path.display()))
}

pub fn io_write(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::config(format!("cannot write {}: {e}", path.display()))
}

impl From<TnError> for CliError {
    fn from(e: TnError) -> Self {
        match e {
            TnError::NonFinite { .. } => CliError::numerical(e.to_string()),
            TnError::Supernet(_) | TnError::Checkpoint(_) => CliError::data(e.to_string()),
            _ => CliError::config(e.to_string()),
        }
    }
}

impl From<SupernetError> for CliError {
    fn from(e: SupernetError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::Tn(t) => t.into(),
            SearchError::NonFinite { .. } | SearchError::ArgmaxMismatch { .. } | SearchError::Shape => {
                CliError::numerical(e.to_string())
            }
            SearchError::Eval { .. } => CliError::data(e.to_string()),
            SearchError::Config(_) | SearchError::Budget(_) => CliError::config(e.to_string()),
        }
    }
}

impl From<TabularError> for CliError {
    fn from(e: TabularError) -> Self {
        match e {
            TabularError::Spec(_) => CliError::config(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<RelationalError> for CliError {
    fn from(e: RelationalError) -> Self {
        match e {
            RelationalError::Tn(t) => t.into(),
            RelationalError::Task(_) | RelationalError::NotChain => CliError::config(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}
