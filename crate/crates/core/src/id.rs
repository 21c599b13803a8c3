//! Entity and message identifiers.

use std::fmt;
use std::str::FromStr;

use uuid::Uuid;

/// Whether an entity is an agent or a client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Agent,
    Client,
}

impl Role {
    pub(crate) fn wire_byte(self) -> u8 {
        match self {
            Role::Agent => 0x01,
            Role::Client => 0x02,
        }
    }

    pub(crate) fn from_wire_byte(b: u8) -> Option<Role> {
        match b {
            0x01 => Some(Role::Agent),
            0x02 => Some(Role::Client),
            _ => None,
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            Role::Agent => "a:",
            Role::Client => "c:",
        }
    }
}

/// Address of an entity's mailbox.
///
/// The text form is `a:<uuid>` for agents and `c:<uuid>` for clients, with
/// the uuid in lowercase hyphenated hex.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId {
    uuid: Uuid,
    role: Role,
}

impl EntityId {
    pub fn new(uuid: Uuid, role: Role) -> Self {
        Self { uuid, role }
    }

    /// A fresh random id.
    pub fn random(role: Role) -> Self {
        Self::new(Uuid::new_v4(), role)
    }

    pub fn uuid(&self) -> Uuid {
        self.uuid
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn is_agent(&self) -> bool {
        self.role == Role::Agent
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.role.prefix(), self.uuid.hyphenated())
    }
}

impl fmt::Debug for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid entity id {0:?}")]
pub struct ParseIdError(pub String);

impl FromStr for EntityId {
    type Err = ParseIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (role, rest) = if let Some(rest) = s.strip_prefix("a:") {
            (Role::Agent, rest)
        } else if let Some(rest) = s.strip_prefix("c:") {
            (Role::Client, rest)
        } else {
            return Err(ParseIdError(s.to_string()));
        };
        // Only the canonical lowercase form is accepted.
        if rest.len() != 36 || rest.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(ParseIdError(s.to_string()));
        }
        let uuid = Uuid::parse_str(rest).map_err(|_| ParseIdError(s.to_string()))?;
        Ok(EntityId::new(uuid, role))
    }
}

/// Sender-generated identifier of a single envelope.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MessageId(Uuid);

impl MessageId {
    pub fn random() -> Self {
        MessageId(Uuid::new_v4())
    }

    pub fn from_bytes(bytes: [u8; 16]) -> Self {
        MessageId(Uuid::from_bytes(bytes))
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        self.0.as_bytes()
    }

    pub fn nil() -> Self {
        MessageId(Uuid::nil())
    }
}

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.simple())
    }
}

impl fmt::Debug for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MessageId({})", self.0.simple())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn text_form_has_role_prefix() {
        let id = EntityId::new(Uuid::nil(), Role::Agent);
        assert_eq!(id.to_string(), "a:00000000-0000-0000-0000-000000000000");
        let id = EntityId::new(Uuid::nil(), Role::Client);
        assert!(id.to_string().starts_with("c:"));
    }

    #[test]
    fn rejects_malformed_text() {
        for bad in ["", "x:00000000-0000-0000-0000-000000000000", "a:1234", "a:ABCDEF00-0000-0000-0000-000000000000"] {
            assert!(bad.parse::<EntityId>().is_err(), "{bad}");
        }
    }

    proptest! {
        #[test]
        fn text_round_trip(bytes in any::<[u8; 16]>(), agent in any::<bool>()) {
            let role = if agent { Role::Agent } else { Role::Client };
            let id = EntityId::new(Uuid::from_bytes(bytes), role);
            prop_assert_eq!(id.to_string().parse::<EntityId>().unwrap(), id);
        }

        #[test]
        fn order_matches_hex_order(raw in proptest::collection::vec(any::<[u8; 16]>(), 1..40)) {
            let mut ids: Vec<EntityId> =
                raw.iter().map(|b| EntityId::new(Uuid::from_bytes(*b), Role::Agent)).collect();
            let mut by_text = ids.clone();
            ids.sort();
            by_text.sort_by_key(|id| id.to_string());
            prop_assert_eq!(ids, by_text);
        }
    }
}
