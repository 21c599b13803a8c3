//! Desk-scale benchmarks for agentry.
//!
//! Each scenario takes a [`BenchConfig`] and returns a [`Report`]: CSV-ready
//! [`BenchRecord`]s plus the pass/fail [`Check`]s of any bounds the scenario
//! embeds. The `agentry-bench` binary wraps them in a CLI.

pub mod config;
pub mod conformance;
pub mod deploy;
pub mod mem;
pub mod record;
pub mod scenarios;
pub mod stats;

pub use config::{BenchConfig, LauncherKind, Mode, Multiplex, PassMode};
pub use deploy::{AgentProgram, Deployment, DeploySpec};
pub use record::{BenchRecord, Check, Report};

use agentry::{ErrorInfo, ExchangeError, LaunchError};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Launch(#[from] LaunchError),
    #[error(transparent)]
    Exchange(#[from] ExchangeError),
    #[error("action failed: {0}")]
    Action(#[from] ErrorInfo),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Scenario(String),
}

pub type BenchResult<T> = Result<T, BenchError>;
