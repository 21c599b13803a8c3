//! Relay store: the shared registry and mailbox service, its wire protocol
//! and a blocking client.

pub mod client;
mod persist;
pub mod protocol;
pub mod server;
mod store;

pub use client::{ClientError, ClientResult, RelayClient};
pub use protocol::{ErrorCode, Located, Request, Response, StoreStats};
pub use server::{RelayConfig, RelayServer, DEFAULT_PORT};
