use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use agentry_core::{BehaviorSpec, EntityId, Role};
use parking_lot::Mutex;

use super::{AgentBlueprint, AgentInstance, AgentStatus, BehaviorRegistry, InProcessLauncher, LaunchError, Launcher};
use crate::exchange::Exchange;
use crate::handle::{Handle, MailboxRouter};
use crate::runtime::DEFAULT_JOIN_BUDGET;

/// Name of the in-process launcher every manager starts with.
pub const LOCAL_LAUNCHER: &str = "local";

struct Entry {
    launcher: String,
    spec: BehaviorSpec,
    instance: Arc<AgentInstance>,
}

/// Launches agents and hands out handles that share one client mailbox.
/// Dropping the manager shuts down every agent it launched.
pub struct Manager {
    exchange: Arc<dyn Exchange>,
    registry: BehaviorRegistry,
    launchers: Mutex<Vec<(String, Arc<dyn Launcher>)>>,
    default_launcher: Mutex<String>,
    router: MailboxRouter,
    agents: Mutex<HashMap<EntityId, Entry>>,
    closed: AtomicBool,
    stop_budget: Duration,
}

impl Manager {
    pub fn new(exchange: Arc<dyn Exchange>, registry: BehaviorRegistry) -> Result<Manager, LaunchError> {
        let router = MailboxRouter::open(exchange.as_ref())?;
        let local: Arc<dyn Launcher> = Arc::new(InProcessLauncher::new(exchange.clone(), registry.clone()));
        Ok(Manager {
            exchange,
            registry,
            launchers: Mutex::new(vec![(LOCAL_LAUNCHER.to_string(), local)]),
            default_launcher: Mutex::new(LOCAL_LAUNCHER.to_string()),
            router,
            agents: Mutex::new(HashMap::new()),
            closed: AtomicBool::new(false),
            stop_budget: DEFAULT_JOIN_BUDGET + Duration::from_secs(5),
        })
    }

    /// Adds (or replaces) a launcher under `name`.
    pub fn add_launcher(&self, name: &str, launcher: Arc<dyn Launcher>) {
        let mut ls = self.launchers.lock();
        ls.retain(|(n, _)| n != name);
        ls.push((name.to_string(), launcher));
    }

    pub fn set_default_launcher(&self, name: &str) -> Result<(), LaunchError> {
        self.launcher(name)?;
        *self.default_launcher.lock() = name.to_string();
        Ok(())
    }

    /// How long [`Manager::close`] waits for agents before killing them.
    pub fn set_stop_budget(&mut self, budget: Duration) {
        self.stop_budget = budget;
    }

    fn launcher(&self, name: &str) -> Result<Arc<dyn Launcher>, LaunchError> {
        self.launchers
            .lock()
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, l)| l.clone())
            .ok_or_else(|| LaunchError::UnknownLauncher(name.to_string()))
    }

    pub fn exchange(&self) -> &Arc<dyn Exchange> {
        &self.exchange
    }

    pub fn registry(&self) -> &BehaviorRegistry {
        &self.registry
    }

    pub fn router(&self) -> &MailboxRouter {
        &self.router
    }

    pub fn launch(&self, blueprint: impl Into<AgentBlueprint>) -> Result<Handle, LaunchError> {
        let name = self.default_launcher.lock().clone();
        self.launch_with(blueprint, &name)
    }

    pub fn launch_with(&self, blueprint: impl Into<AgentBlueprint>, launcher: &str) -> Result<Handle, LaunchError> {
        let blueprint = blueprint.into();
        let l = self.launcher(launcher)?;
        let spec = blueprint.spec(&self.registry)?;
        let id = self.exchange.register(Role::Agent, Some(spec.clone()))?;
        match l.launch(id, blueprint) {
            Ok(instance) => {
                self.agents.lock().insert(
                    id,
                    Entry {
                        launcher: launcher.to_string(),
                        spec,
                        instance,
                    },
                );
                Ok(self.router.handle(id))
            }
            Err(e) => {
                let _ = self.exchange.close(id);
                Err(e)
            }
        }
    }

    /// Starts a new agent on an existing, still open mailbox, e.g. after a
    /// non-terminal shutdown. The behavior must match the one the id was
    /// registered with.
    pub fn relaunch(&self, id: EntityId, blueprint: impl Into<AgentBlueprint>, launcher: &str) -> Result<Handle, LaunchError> {
        let blueprint = blueprint.into();
        let l = self.launcher(launcher)?;
        let spec = blueprint.spec(&self.registry)?;
        {
            let agents = self.agents.lock();
            let e = agents.get(&id).ok_or(LaunchError::UnknownAgent(id))?;
            if e.spec.name() != spec.name() {
                return Err(LaunchError::BadArgs {
                    name: spec.name().to_string(),
                    detail: format!("{id} runs {}", e.spec.name()),
                });
            }
            if !e.instance.status().is_terminal() {
                return Err(LaunchError::BadArgs {
                    name: spec.name().to_string(),
                    detail: format!("{id} is still running"),
                });
            }
        }
        let instance = l.launch(id, blueprint)?;
        self.agents.lock().insert(
            id,
            Entry {
                launcher: launcher.to_string(),
                spec,
                instance,
            },
        );
        Ok(self.router.handle(id))
    }

    pub fn handle(&self, id: EntityId) -> Handle {
        self.router.handle(id)
    }

    pub fn agents(&self) -> Vec<EntityId> {
        let mut ids: Vec<_> = self.agents.lock().keys().copied().collect();
        ids.sort();
        ids
    }

    pub fn instance(&self, id: EntityId) -> Option<Arc<AgentInstance>> {
        self.agents.lock().get(&id).map(|e| e.instance.clone())
    }

    pub fn status(&self, id: EntityId) -> Option<AgentStatus> {
        self.agents.lock().get(&id).map(|e| e.instance.status())
    }

    pub fn launcher_of(&self, id: EntityId) -> Option<String> {
        self.agents.lock().get(&id).map(|e| e.launcher.clone())
    }

    /// Shuts an agent down for good and closes its mailbox.
    pub fn shutdown(&self, id: EntityId, blocking: bool) -> Result<(), LaunchError> {
        self.shutdown_with(id, true, blocking)
    }

    /// Like [`Manager::shutdown`]; with `terminal == false` the mailbox
    /// stays open and keeps collecting messages for a later relaunch.
    pub fn shutdown_with(&self, id: EntityId, terminal: bool, blocking: bool) -> Result<(), LaunchError> {
        let instance = self.instance(id).ok_or(LaunchError::UnknownAgent(id))?;
        instance.mark_stopping();
        self.router
            .handle(id)
            .shutdown(terminal, blocking)
            .map_err(LaunchError::Shutdown)?;
        if blocking {
            instance.wait_terminal(self.stop_budget);
        }
        Ok(())
    }

    /// Shuts down every agent, waits for them within the stop budget and
    /// kills stragglers that run in their own process. Idempotent.
    pub fn close(&self) {
        if self.closed.swap(true, Ordering::SeqCst) {
            return;
        }
        let instances: Vec<_> = self.agents.lock().values().map(|e| e.instance.clone()).collect();
        let live: Vec<_> = instances.into_iter().filter(|i| !i.status().is_terminal()).collect();
        for i in &live {
            i.mark_stopping();
            if let Err(e) = self.router.handle(i.id()).shutdown(true, false) {
                log::warn!("{}: shutdown request failed: {e}", i.id());
            }
        }
        let deadline = Instant::now() + self.stop_budget;
        for i in &live {
            let left = deadline.saturating_duration_since(Instant::now());
            if i.wait_terminal(left).is_none() {
                log::warn!("{}: did not stop in time", i.id());
                match i.kill() {
                    Ok(true) => {
                        i.wait_terminal(Duration::from_secs(2));
                    }
                    Ok(false) => {}
                    Err(e) => log::warn!("{}: kill failed: {e}", i.id()),
                }
                let _ = self.exchange.close(i.id());
            }
        }
    }
}

impl Drop for Manager {
    fn drop(&mut self) {
        self.close();
    }
}
