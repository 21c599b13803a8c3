//! Exchanges, relay stores and launchers assembled for a scenario.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use agentry::exchange::{DistConfig, DistExchange, Exchange, LocalExchange};
use agentry::launch::{AgentInstance, RestartPolicy, SubprocessConfig, SubprocessLauncher};
use agentry::{builtin, Manager};
use agentry_relay::{RelayConfig, RelayServer, StoreStats};
use tempfile::TempDir;

use crate::{BenchError, BenchResult, Mode};

/// Name under which the subprocess launcher is registered.
pub const PROC: &str = "proc";

/// Command that runs an agent from the `AGENTRY_*` environment.
#[derive(Debug, Clone)]
pub struct AgentProgram {
    pub path: PathBuf,
    pub args: Vec<String>,
}

impl AgentProgram {
    /// The running benchmark binary's hidden `agent` subcommand.
    pub fn this_binary() -> std::io::Result<Self> {
        Ok(AgentProgram {
            path: std::env::current_exe()?,
            args: vec!["agent".into()],
        })
    }
}

#[derive(Debug, Clone)]
pub struct DeploySpec {
    /// `None` keeps everything in memory.
    pub dist: Option<DistConfig>,
    pub latency: Duration,
    pub program: Option<AgentProgram>,
    pub restart: RestartPolicy,
    pub trace: bool,
    pub log_dir: Option<PathBuf>,
}

impl DeploySpec {
    pub fn for_mode(mode: Mode) -> Self {
        DeploySpec {
            dist: mode.dist_config(),
            latency: Duration::ZERO,
            program: None,
            restart: RestartPolicy::default(),
            trace: false,
            log_dir: None,
        }
    }

    pub fn latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn program(mut self, program: Option<AgentProgram>) -> Self {
        self.program = program;
        self
    }
}

/// A manager with its exchange and, for distributed modes, a private relay
/// store. Agents are stopped before the store goes away.
pub struct Deployment {
    // field order is drop order: agents and the manager's mailbox first
    pub manager: Manager,
    relay: Option<RelayServer>,
    _state: Option<TempDir>,
}

impl Deployment {
    pub fn start(spec: DeploySpec) -> BenchResult<Deployment> {
        let Some(dist) = spec.dist.clone() else {
            if spec.program.is_some() {
                return Err(BenchError::Config("child processes need a distributed mode".into()));
            }
            let manager = Manager::new(Arc::new(LocalExchange::new()), builtin::registry())?;
            return Ok(Deployment {
                manager,
                relay: None,
                _state: None,
            });
        };
        let relay = RelayServer::start(RelayConfig {
            inject_latency: spec.latency,
            ..RelayConfig::default()
        })?;
        let exchange: Arc<dyn Exchange> = Arc::new(DistExchange::connect(relay.addr(), dist.clone())?);
        let manager = Manager::new(exchange.clone(), builtin::registry())?;
        let mut state = None;
        if let Some(program) = spec.program {
            let dir = tempfile::tempdir()?;
            let mut config = SubprocessConfig::new(&program.path, relay.addr().to_string());
            config.args = program.args;
            config.routing = dist.routing;
            config.listen = dist.listen;
            config.state_root = Some(dir.path().join("state"));
            config.restart = spec.restart;
            config.trace = spec.trace;
            config.log_dir = spec.log_dir;
            manager.add_launcher(PROC, Arc::new(SubprocessLauncher::new(config, exchange)));
            state = Some(dir);
        }
        Ok(Deployment {
            manager,
            relay: Some(relay),
            _state: state,
        })
    }

    pub fn store_stats(&self) -> StoreStats {
        self.relay.as_ref().map(|r| r.stats()).unwrap_or_default()
    }

    pub fn instance(&self, h: &agentry::Handle) -> BenchResult<Arc<AgentInstance>> {
        self.manager
            .instance(h.target())
            .ok_or_else(|| BenchError::Scenario(format!("{} is not managed here", h.target())))
    }
}

