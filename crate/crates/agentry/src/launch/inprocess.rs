use std::path::PathBuf;
use std::sync::Arc;
use std::thread;

use agentry_core::EntityId;

use super::{AgentBlueprint, AgentInstance, AgentStatus, BehaviorRegistry, LaunchError, Launcher, StateStore};
use crate::exchange::Exchange;
use crate::runtime::{AgentRuntime, RunStatus, RuntimeConfig};

/// Runs each agent on its own thread in the current process.
pub struct InProcessLauncher {
    exchange: Arc<dyn Exchange>,
    registry: BehaviorRegistry,
    config: RuntimeConfig,
    state_root: Option<PathBuf>,
}

impl InProcessLauncher {
    pub fn new(exchange: Arc<dyn Exchange>, registry: BehaviorRegistry) -> Self {
        Self {
            exchange,
            registry,
            config: RuntimeConfig::default(),
            state_root: None,
        }
    }

    pub fn with_config(mut self, config: RuntimeConfig) -> Self {
        self.config = config;
        self
    }

    /// Gives every agent a checkpoint directory under `root`.
    pub fn with_state_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.state_root = Some(root.into());
        self
    }
}

impl Launcher for InProcessLauncher {
    fn name(&self) -> &str {
        "in-process"
    }

    fn launch(&self, id: EntityId, blueprint: AgentBlueprint) -> Result<Arc<AgentInstance>, LaunchError> {
        let behavior = blueprint.into_behavior(&self.registry)?;
        let mut config = self.config.clone();
        if let Some(root) = &self.state_root {
            config.state = Some(StateStore::open(root, id)?);
        }
        let client = self.exchange.bind(id)?;
        let runtime = AgentRuntime::new(behavior, client.clone(), config);
        let instance = Arc::new(AgentInstance::new(id, self.name()));
        let inst = instance.clone();
        let exchange = self.exchange.clone();
        thread::Builder::new()
            .name(format!("agent-{id}"))
            .spawn(move || {
                let status = runtime.run();
                client.join();
                if let RunStatus::LoopFailure(info) = &status {
                    // nothing restarts an in-process agent; refuse further requests
                    log::warn!("{id}: stopped after loop failure: {info}");
                    let _ = exchange.close(id);
                }
                inst.set_status(AgentStatus::Stopped(status));
            })?;
        Ok(instance)
    }
}
