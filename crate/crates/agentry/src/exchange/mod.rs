//! Mailbox transports.
//!
//! An [`Exchange`] hosts mailboxes addressed by [`EntityId`]. Binding an id
//! yields an [`ExchangeClient`], the single consumer of that mailbox, which
//! can also send to any other mailbox.

use std::sync::Arc;
use std::time::Duration;

use agentry_core::{BehaviorSpec, EntityId, Envelope, ErrorInfo, ErrorKind, Role};

use crate::dataplane::ObjectDepot;

pub(crate) mod direct;
pub mod dist;
pub mod local;

pub use dist::{DistClient, DistConfig, DistExchange, Routing};
pub use local::LocalExchange;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExchangeError {
    #[error("unknown entity {0}")]
    UnknownEntity(EntityId),
    #[error("mailbox {0} is closed")]
    MailboxClosed(EntityId),
    #[error("timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
}

impl ExchangeError {
    pub fn to_info(&self) -> ErrorInfo {
        let kind = match self {
            ExchangeError::MailboxClosed(_) => ErrorKind::MailboxClosed,
            ExchangeError::Timeout => ErrorKind::Timeout,
            ExchangeError::UnknownEntity(_) | ExchangeError::Transport(_) => {
                ErrorKind::TransportFailure
            }
        };
        ErrorInfo::new(kind, self.to_string())
    }
}

impl From<ExchangeError> for ErrorInfo {
    fn from(e: ExchangeError) -> Self {
        e.to_info()
    }
}

pub type ExchangeResult<T> = Result<T, ExchangeError>;

pub trait Exchange: Send + Sync {
    /// Creates a fresh, open, empty mailbox. Agent specs are indexed for
    /// discovery.
    fn register(&self, role: Role, spec: Option<BehaviorSpec>) -> ExchangeResult<EntityId>;

    /// Attaches to an existing mailbox as its consumer.
    fn bind(&self, id: EntityId) -> ExchangeResult<Arc<dyn ExchangeClient>>;

    /// Closes a mailbox permanently. Idempotent.
    fn close(&self, id: EntityId) -> ExchangeResult<()>;

    /// Open agents whose ancestry contains `behavior`, sorted by id.
    fn discover(&self, behavior: &str) -> ExchangeResult<Vec<EntityId>>;
}

pub trait ExchangeClient: Send + Sync {
    fn id(&self) -> EntityId;

    fn send(&self, e: &Envelope) -> ExchangeResult<()>;

    /// Oldest queued envelope, waiting up to `timeout`. Once the mailbox is
    /// closed and drained this returns `MailboxClosed`.
    fn recv(&self, timeout: Duration) -> ExchangeResult<Envelope>;

    fn discover(&self, behavior: &str) -> ExchangeResult<Vec<EntityId>>;

    /// Closes this client's own mailbox.
    fn close(&self) -> ExchangeResult<()>;

    /// Detaches from the mailbox. Envelopes buffered locally but not yet
    /// received are handed back to the mailbox when it is still open.
    fn stop(&self);

    /// Waits for background work started by [`ExchangeClient::stop`].
    fn join(&self) {}

    /// Object depot bound to this client's data plane.
    fn depot(&self) -> Arc<ObjectDepot>;
}
