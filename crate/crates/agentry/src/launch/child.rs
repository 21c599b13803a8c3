//! Entry point of an agent child process.

use std::path::PathBuf;

use agentry_core::EntityId;

use super::{BehaviorRegistry, StateStore};
use crate::exchange::{DistConfig, DistExchange, Exchange, ExchangeError, Routing};
use crate::runtime::{AgentRuntime, RunStatus, RuntimeConfig};
use crate::trace::TraceSink;

pub const EXIT_CLEAN: i32 = 0;
pub const EXIT_LOOP_FAILURE: i32 = 2;
pub const EXIT_SETUP_FAILURE: i32 = 3;
/// Bad environment, unknown behavior or a mailbox that is already closed.
pub const EXIT_CONFIG: i32 = 4;

const VAR_STORE: &str = "AGENTRY_STORE_ENDPOINT";
const VAR_AGENT: &str = "AGENTRY_AGENT_ID";
const VAR_BEHAVIOR: &str = "AGENTRY_BEHAVIOR";
const VAR_ARGS: &str = "AGENTRY_BEHAVIOR_ARGS";
const VAR_STATE: &str = "AGENTRY_STATE_DIR";
const VAR_ROUTING: &str = "AGENTRY_ROUTING";
const VAR_LISTEN: &str = "AGENTRY_LISTEN";
const VAR_TRACE: &str = "AGENTRY_TRACE";

/// Everything a child needs to run one agent, passed through environment
/// variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChildEnv {
    pub store_endpoint: String,
    pub agent: EntityId,
    pub behavior: String,
    pub args: Vec<u8>,
    pub state_root: Option<PathBuf>,
    pub routing: Routing,
    pub listen: bool,
    pub trace: bool,
}

impl ChildEnv {
    pub fn to_vars(&self) -> Vec<(&'static str, String)> {
        let mut v = vec![
            (VAR_STORE, self.store_endpoint.clone()),
            (VAR_AGENT, self.agent.to_string()),
            (VAR_BEHAVIOR, self.behavior.clone()),
            (VAR_ARGS, hex::encode(&self.args)),
            (
                VAR_ROUTING,
                match self.routing {
                    Routing::Hybrid => "hybrid",
                    Routing::RelayOnly => "relay",
                }
                .to_string(),
            ),
            (VAR_LISTEN, if self.listen { "1" } else { "0" }.to_string()),
            (VAR_TRACE, if self.trace { "1" } else { "0" }.to_string()),
        ];
        if let Some(root) = &self.state_root {
            v.push((VAR_STATE, root.display().to_string()));
        }
        v
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<ChildEnv, String> {
        let need = |k: &str| get(k).ok_or_else(|| format!("{k} is not set"));
        let flag = |k: &str| match get(k).as_deref() {
            None | Some("0") | Some("") => Ok(false),
            Some("1") => Ok(true),
            Some(other) => Err(format!("{k}: expected 0 or 1, got {other:?}")),
        };
        Ok(ChildEnv {
            store_endpoint: need(VAR_STORE)?,
            agent: need(VAR_AGENT)?.parse().map_err(|e| format!("{VAR_AGENT}: {e}"))?,
            behavior: need(VAR_BEHAVIOR)?,
            args: hex::decode(get(VAR_ARGS).unwrap_or_default()).map_err(|e| format!("{VAR_ARGS}: {e}"))?,
            state_root: get(VAR_STATE).filter(|s| !s.is_empty()).map(PathBuf::from),
            routing: match get(VAR_ROUTING).as_deref() {
                None | Some("hybrid") => Routing::Hybrid,
                Some("relay") => Routing::RelayOnly,
                Some(other) => return Err(format!("{VAR_ROUTING}: unknown routing {other:?}")),
            },
            listen: match get(VAR_LISTEN) {
                None => true,
                Some(_) => flag(VAR_LISTEN)?,
            },
            trace: flag(VAR_TRACE)?,
        })
    }

    pub fn from_process() -> Result<ChildEnv, String> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }
}

/// Runs the agent described by the process environment and returns the
/// exit code for the process.
pub fn agent_main(registry: &BehaviorRegistry) -> i32 {
    let env = match ChildEnv::from_process() {
        Ok(e) => e,
        Err(e) => {
            log::error!("bad agent environment: {e}");
            return EXIT_CONFIG;
        }
    };
    let id = env.agent;
    let behavior = match registry.create(&env.behavior, &env.args) {
        Ok(b) => b,
        Err(e) => {
            log::error!("{id}: {e}");
            return EXIT_CONFIG;
        }
    };
    let config = DistConfig {
        routing: env.routing,
        listen: env.listen,
        ..DistConfig::default()
    };
    let exchange = match DistExchange::connect(env.store_endpoint.as_str(), config) {
        Ok(x) => x,
        Err(e) => {
            log::error!("{id}: cannot reach relay store {}: {e}", env.store_endpoint);
            return EXIT_LOOP_FAILURE;
        }
    };
    let client = match exchange.bind(id) {
        Ok(c) => c,
        Err(e @ (ExchangeError::MailboxClosed(_) | ExchangeError::UnknownEntity(_))) => {
            log::error!("{id}: {e}");
            return EXIT_CONFIG;
        }
        Err(e) => {
            log::error!("{id}: cannot bind mailbox: {e}");
            return EXIT_LOOP_FAILURE;
        }
    };
    let mut rc = RuntimeConfig::default();
    if env.trace {
        rc.trace = TraceSink::writer(std::io::stderr());
    }
    if let Some(root) = &env.state_root {
        match StateStore::open(root, id) {
            Ok(s) => rc.state = Some(s),
            Err(e) => {
                log::error!("{id}: cannot open state directory: {e}");
                return EXIT_CONFIG;
            }
        }
    }
    let status = AgentRuntime::new(behavior, client.clone(), rc).run();
    client.join();
    match status {
        RunStatus::CleanShutdown => EXIT_CLEAN,
        RunStatus::LoopFailure(info) => {
            log::error!("{id}: loop failure: {info}");
            EXIT_LOOP_FAILURE
        }
        RunStatus::SetupFailure(info) => {
            log::error!("{id}: setup failure: {info}");
            EXIT_SETUP_FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn env_round_trip() {
        let env = ChildEnv {
            store_endpoint: "127.0.0.1:7420".into(),
            agent: EntityId::random(agentry_core::Role::Agent),
            behavior: "Counter".into(),
            args: vec![0, 1, 0xff],
            state_root: Some(PathBuf::from("/tmp/state")),
            routing: Routing::RelayOnly,
            listen: false,
            trace: true,
        };
        let vars: HashMap<_, _> = env.to_vars().into_iter().collect();
        let back = ChildEnv::from_lookup(|k| vars.get(k).cloned()).unwrap();
        assert_eq!(back, env);
    }

    #[test]
    fn missing_agent_is_reported() {
        let err = ChildEnv::from_lookup(|k| (k == VAR_STORE).then(|| "x:1".to_string())).unwrap_err();
        assert!(err.contains(VAR_AGENT));
    }
}
