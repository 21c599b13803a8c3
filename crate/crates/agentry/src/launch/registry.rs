use std::collections::HashMap;
use std::sync::Arc;

use agentry_core::BehaviorSpec;

use super::LaunchError;
use crate::behavior::{AgentBehavior, BoxError};

type Factory = Arc<dyn Fn(&[u8]) -> Result<AgentBehavior, BoxError> + Send + Sync>;

/// Named behavior constructors. Agents started in another process are
/// described by a registered name plus argument bytes; the child rebuilds
/// the behavior from the same registry.
#[derive(Clone, Default)]
pub struct BehaviorRegistry {
    factories: HashMap<String, Factory>,
}

impl std::fmt::Debug for BehaviorRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.factories.keys()).finish()
    }
}

impl BehaviorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(&mut self, name: &str, factory: F) -> &mut Self
    where
        F: Fn(&[u8]) -> Result<AgentBehavior, BoxError> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Arc::new(factory));
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<_> = self.factories.keys().cloned().collect();
        v.sort();
        v
    }

    pub fn create(&self, name: &str, args: &[u8]) -> Result<AgentBehavior, LaunchError> {
        let f = self
            .factories
            .get(name)
            .ok_or_else(|| LaunchError::UnknownBehavior(name.to_string()))?;
        f(args).map_err(|e| LaunchError::BadArgs {
            name: name.to_string(),
            detail: e.to_string(),
        })
    }
}

/// What to run as an agent.
pub enum AgentBlueprint {
    /// A behavior built in this process. Only in-process launchers accept it.
    Instance(AgentBehavior),
    /// A registry entry and its argument bytes.
    Registered { name: String, args: Vec<u8> },
}

impl std::fmt::Debug for AgentBlueprint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AgentBlueprint::Instance(b) => f.debug_tuple("Instance").field(&b.spec().name()).finish(),
            AgentBlueprint::Registered { name, args } => f
                .debug_struct("Registered")
                .field("name", name)
                .field("args", &args.len())
                .finish(),
        }
    }
}

impl AgentBlueprint {
    pub fn registered(name: &str, args: impl Into<Vec<u8>>) -> Self {
        AgentBlueprint::Registered {
            name: name.to_string(),
            args: args.into(),
        }
    }

    pub fn spec(&self, registry: &BehaviorRegistry) -> Result<BehaviorSpec, LaunchError> {
        match self {
            AgentBlueprint::Instance(b) => Ok(b.spec().clone()),
            AgentBlueprint::Registered { name, args } => Ok(registry.create(name, args)?.spec().clone()),
        }
    }

    pub fn into_behavior(self, registry: &BehaviorRegistry) -> Result<AgentBehavior, LaunchError> {
        match self {
            AgentBlueprint::Instance(b) => Ok(b),
            AgentBlueprint::Registered { name, args } => registry.create(&name, &args),
        }
    }
}

impl From<AgentBehavior> for AgentBlueprint {
    fn from(b: AgentBehavior) -> Self {
        AgentBlueprint::Instance(b)
    }
}
