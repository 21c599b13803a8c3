//! Identities, message model and wire codec shared by every agentry component.
//!
//! Everything here is an immutable value once constructed. The envelope
//! frame format defined in [`envelope`] is the wire contract used for direct
//! peer messaging and for the relay store.

pub mod envelope;
mod error;
pub mod id;
pub mod spec;
pub mod wire;

pub use envelope::{
    decode_envelope, encode_envelope, Body, Envelope, ErrorInfo, ErrorKind, Kind, Location,
    ObjectId, Payload, ProxyRef, MAX_REFERENCE_BYTES,
};
pub use error::CodecError;
pub use id::{EntityId, MessageId, ParseIdError, Role};
pub use spec::{behavior_is_a, BehaviorSpec, SpecError};
