use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use agentry_core::EntityId;
use parking_lot::Mutex;

use super::child::{ChildEnv, EXIT_CLEAN, EXIT_CONFIG, EXIT_SETUP_FAILURE};
use super::{AgentBlueprint, AgentInstance, AgentStatus, LaunchError, Launcher};
use crate::exchange::{Exchange, Routing};
use crate::runtime::RunStatus;

const WATCH_TICK: Duration = Duration::from_millis(20);

/// Exponential backoff between restarts of a crashed agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RestartPolicy {
    pub max_restarts: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RestartPolicy {
    fn default() -> Self {
        Self {
            max_restarts: 5,
            initial_backoff: Duration::from_millis(250),
            max_backoff: Duration::from_secs(10),
        }
    }
}

impl RestartPolicy {
    pub fn never() -> Self {
        Self {
            max_restarts: 0,
            ..Self::default()
        }
    }

    /// Delay before restart number `attempt` (1-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.saturating_sub(1)).unwrap_or(u32::MAX);
        self.initial_backoff
            .checked_mul(factor)
            .unwrap_or(self.max_backoff)
            .min(self.max_backoff)
    }
}

#[derive(Debug, Clone)]
pub struct SubprocessConfig {
    /// Executable that runs [`agent_main`](super::agent_main).
    pub program: PathBuf,
    /// Arguments passed to `program`, e.g. a subcommand name.
    pub args: Vec<String>,
    /// `host:port` of the relay store.
    pub store_endpoint: String,
    pub routing: Routing,
    pub listen: bool,
    pub state_root: Option<PathBuf>,
    pub restart: RestartPolicy,
    pub trace: bool,
    /// When set, each child's stderr is appended to `<log_dir>/<agent id>.log`
    /// instead of being inherited.
    pub log_dir: Option<PathBuf>,
    pub env: Vec<(String, String)>,
}

impl SubprocessConfig {
    pub fn new(program: impl Into<PathBuf>, store_endpoint: impl Into<String>) -> Self {
        Self {
            program: program.into(),
            args: Vec::new(),
            store_endpoint: store_endpoint.into(),
            routing: Routing::Hybrid,
            listen: true,
            state_root: None,
            restart: RestartPolicy::default(),
            trace: false,
            log_dir: None,
            env: Vec::new(),
        }
    }
}

/// Runs each agent in a child process connected to a relay store, and
/// restarts children that die without a clean shutdown.
pub struct SubprocessLauncher {
    config: SubprocessConfig,
    exchange: Arc<dyn Exchange>,
}

impl SubprocessLauncher {
    /// `exchange` must address the same relay store as the children; it is
    /// used to close the mailbox of agents that exhaust their restarts.
    pub fn new(config: SubprocessConfig, exchange: Arc<dyn Exchange>) -> Self {
        Self { config, exchange }
    }

    pub fn config(&self) -> &SubprocessConfig {
        &self.config
    }

    fn spawn(&self, env: &ChildEnv) -> std::io::Result<Child> {
        let mut cmd = Command::new(&self.config.program);
        let stderr = match &self.config.log_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let f = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(dir.join(format!("{}.log", env.agent)))?;
                Stdio::from(f)
            }
            None => Stdio::inherit(),
        };
        cmd.args(&self.config.args)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(stderr);
        for (k, v) in env.to_vars() {
            cmd.env(k, v);
        }
        for (k, v) in &self.config.env {
            cmd.env(k, v);
        }
        cmd.spawn()
    }
}

impl Launcher for SubprocessLauncher {
    fn name(&self) -> &str {
        "subprocess"
    }

    fn launch(&self, id: EntityId, blueprint: AgentBlueprint) -> Result<Arc<AgentInstance>, LaunchError> {
        let AgentBlueprint::Registered { name, args } = blueprint else {
            return Err(LaunchError::NeedsRegistered(self.name().to_string()));
        };
        let env = ChildEnv {
            store_endpoint: self.config.store_endpoint.clone(),
            agent: id,
            behavior: name,
            args,
            state_root: self.config.state_root.clone(),
            routing: self.config.routing,
            listen: self.config.listen,
            trace: self.config.trace,
        };
        let child = Arc::new(Mutex::new(self.spawn(&env)?));
        let instance = Arc::new(AgentInstance::new(id, self.name()));
        instance.set_pid(Some(child.lock().id()));
        {
            let child = child.clone();
            instance.set_kill_switch(Box::new(move || child.lock().kill()));
        }
        let me = SubprocessLauncher {
            config: self.config.clone(),
            exchange: self.exchange.clone(),
        };
        let inst = instance.clone();
        thread::Builder::new()
            .name(format!("supervise-{id}"))
            .spawn(move || me.supervise(&inst, &child, &env))?;
        Ok(instance)
    }
}

impl SubprocessLauncher {
    fn supervise(&self, inst: &AgentInstance, child: &Mutex<Child>, env: &ChildEnv) {
        let id = inst.id();
        loop {
            let exit = loop {
                match child.lock().try_wait() {
                    Ok(Some(status)) => break status,
                    Ok(None) => {}
                    Err(e) => {
                        log::error!("{id}: cannot poll child: {e}");
                        inst.set_status(AgentStatus::Failed(e.to_string()));
                        return;
                    }
                }
                thread::sleep(WATCH_TICK);
            };
            inst.set_pid(None);
            match exit.code() {
                Some(EXIT_CLEAN) => {
                    inst.set_status(AgentStatus::Stopped(RunStatus::CleanShutdown));
                    return;
                }
                Some(code @ (EXIT_SETUP_FAILURE | EXIT_CONFIG)) => {
                    inst.set_status(AgentStatus::Failed(format!("agent exited with status {code}")));
                    return;
                }
                _ => {}
            }
            if inst.is_stopping() {
                inst.set_status(AgentStatus::Failed(format!("agent died while stopping ({exit})")));
                return;
            }
            let attempt = inst.restarts() + 1;
            if attempt > self.config.restart.max_restarts {
                log::error!("{id}: giving up after {} restarts ({exit})", attempt - 1);
                let _ = self.exchange.close(id);
                inst.set_status(AgentStatus::Failed(format!("restarts exhausted; last exit {exit}")));
                return;
            }
            log::warn!("{id}: agent died ({exit}); restart {attempt} follows");
            inst.set_status(AgentStatus::Restarting { attempt });
            thread::sleep(self.config.restart.backoff(attempt));
            if inst.is_stopping() {
                inst.set_status(AgentStatus::Failed("stopped while restarting".into()));
                return;
            }
            inst.bump_restarts();
            match self.spawn(env) {
                Ok(c) => {
                    inst.set_pid(Some(c.id()));
                    *child.lock() = c;
                    inst.set_status(AgentStatus::Running);
                }
                Err(e) => {
                    log::error!("{id}: restart failed: {e}");
                    let _ = self.exchange.close(id);
                    inst.set_status(AgentStatus::Failed(e.to_string()));
                    return;
                }
            }
        }
    }
}
