//! Starting agents: launchers, the manager facade and checkpoint storage.

use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::time::{Duration, Instant};

use agentry_core::EntityId;
use parking_lot::{Condvar, Mutex};

use crate::behavior::BehaviorError;
use crate::exchange::ExchangeError;
use crate::runtime::RunStatus;

type KillSwitch = Box<dyn Fn() -> std::io::Result<()> + Send>;

mod child;
mod inprocess;
mod manager;
mod registry;
mod state;
mod subprocess;

pub use child::{agent_main, ChildEnv, EXIT_CLEAN, EXIT_CONFIG, EXIT_LOOP_FAILURE, EXIT_SETUP_FAILURE};
pub use inprocess::InProcessLauncher;
pub use manager::{Manager, LOCAL_LAUNCHER};
pub use registry::{AgentBlueprint, BehaviorRegistry};
pub use state::{StateError, StateStore};
pub use subprocess::{RestartPolicy, SubprocessConfig, SubprocessLauncher};

#[derive(Debug, thiserror::Error)]
pub enum LaunchError {
    #[error("no behavior registered as {0:?}")]
    UnknownBehavior(String),
    #[error("bad arguments for {name}: {detail}")]
    BadArgs { name: String, detail: String },
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error("launcher {0:?} only starts registered behaviors")]
    NeedsRegistered(String),
    #[error("no launcher named {0:?}")]
    UnknownLauncher(String),
    #[error("unknown agent {0}")]
    UnknownAgent(EntityId),
    #[error(transparent)]
    Exchange(#[from] ExchangeError),
    #[error("cannot start agent: {0}")]
    Spawn(#[from] std::io::Error),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("shutdown failed: {0}")]
    Shutdown(agentry_core::ErrorInfo),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AgentStatus {
    Running,
    /// Waiting out the backoff before restart number `attempt`.
    Restarting { attempt: u32 },
    Stopped(RunStatus),
    Failed(String),
}

impl AgentStatus {
    pub fn is_terminal(&self) -> bool {
        matches!(self, AgentStatus::Stopped(_) | AgentStatus::Failed(_))
    }
}

/// Bookkeeping for one launched agent.
pub struct AgentInstance {
    id: EntityId,
    launcher: String,
    status: Mutex<AgentStatus>,
    changed: Condvar,
    restarts: AtomicU32,
    stopping: AtomicBool,
    pid: Mutex<Option<u32>>,
    kill_switch: Mutex<Option<KillSwitch>>,
}

impl std::fmt::Debug for AgentInstance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AgentInstance")
            .field("id", &self.id)
            .field("launcher", &self.launcher)
            .field("status", &*self.status.lock())
            .finish()
    }
}

impl AgentInstance {
    pub(crate) fn new(id: EntityId, launcher: &str) -> Self {
        Self {
            id,
            launcher: launcher.to_string(),
            status: Mutex::new(AgentStatus::Running),
            changed: Condvar::new(),
            restarts: AtomicU32::new(0),
            stopping: AtomicBool::new(false),
            pid: Mutex::new(None),
            kill_switch: Mutex::new(None),
        }
    }

    pub fn id(&self) -> EntityId {
        self.id
    }

    pub fn launcher(&self) -> &str {
        &self.launcher
    }

    pub fn status(&self) -> AgentStatus {
        self.status.lock().clone()
    }

    pub fn restarts(&self) -> u32 {
        self.restarts.load(Ordering::SeqCst)
    }

    /// OS process id, for agents running in a child process.
    pub fn pid(&self) -> Option<u32> {
        *self.pid.lock()
    }

    pub(crate) fn set_status(&self, s: AgentStatus) {
        *self.status.lock() = s;
        self.changed.notify_all();
    }

    pub(crate) fn set_pid(&self, pid: Option<u32>) {
        *self.pid.lock() = pid;
    }

    pub(crate) fn set_kill_switch(&self, f: KillSwitch) {
        *self.kill_switch.lock() = Some(f);
    }

    pub(crate) fn bump_restarts(&self) -> u32 {
        self.restarts.fetch_add(1, Ordering::SeqCst) + 1
    }

    /// Marks the agent as being stopped on purpose; supervisors stop
    /// restarting it.
    pub(crate) fn mark_stopping(&self) {
        self.stopping.store(true, Ordering::SeqCst);
    }

    pub(crate) fn is_stopping(&self) -> bool {
        self.stopping.load(Ordering::SeqCst)
    }

    /// Kills the agent's process abruptly, as a crash would. Returns false
    /// for agents that do not run in their own process.
    pub fn kill(&self) -> std::io::Result<bool> {
        match &*self.kill_switch.lock() {
            Some(f) => f().map(|_| true),
            None => Ok(false),
        }
    }

    /// Waits until `pred` holds for the status or the timeout passes.
    pub fn wait_for(&self, timeout: Duration, pred: impl Fn(&AgentStatus) -> bool) -> Option<AgentStatus> {
        let deadline = Instant::now() + timeout;
        let mut st = self.status.lock();
        loop {
            if pred(&st) {
                return Some(st.clone());
            }
            if self.changed.wait_until(&mut st, deadline).timed_out() {
                return pred(&st).then(|| st.clone());
            }
        }
    }

    pub fn wait_terminal(&self, timeout: Duration) -> Option<AgentStatus> {
        self.wait_for(timeout, AgentStatus::is_terminal)
    }
}

/// Starts agents on some resource.
pub trait Launcher: Send + Sync {
    fn name(&self) -> &str;

    /// Starts `blueprint` bound to the already registered mailbox `id`.
    fn launch(&self, id: EntityId, blueprint: AgentBlueprint) -> Result<std::sync::Arc<AgentInstance>, LaunchError>;
}
