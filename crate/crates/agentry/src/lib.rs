//! Stateful agents that talk through asynchronous messages.
//!
//! An agent is a [`behavior::Behavior`] (state, actions, control loops)
//! bound to a mailbox on an [`exchange::Exchange`]. Clients and other agents
//! reach it through [`handle::Handle`]s; a [`launch::Manager`] starts agents
//! on in-process or subprocess launchers and supervises them.

pub mod behavior;
pub mod builtin;
mod completion;
pub mod dataplane;
pub mod exchange;
pub mod handle;
pub mod launch;
pub mod runtime;
pub mod trace;

pub use agentry_core as core;
pub use agentry_core::{BehaviorSpec, Body, EntityId, Envelope, ErrorInfo, ErrorKind, MessageId, Payload, ProxyRef, Role};
pub use behavior::{AgentBehavior, Behavior, BehaviorError, BoxError, Ctx, LoopKind};
pub use dataplane::{DepotConfig, ObjectDepot, PublishPolicy};
pub use exchange::{DistConfig, DistExchange, Exchange, ExchangeClient, ExchangeError, LocalExchange, Routing};
pub use handle::{ActionFuture, Handle, MailboxRouter};
pub use launch::{AgentBlueprint, AgentStatus, BehaviorRegistry, LaunchError, Launcher, Manager};
pub use runtime::{AgentControl, AgentRuntime, LoopErrorPolicy, RunStatus, RuntimeConfig};
