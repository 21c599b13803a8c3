//! Declarative description of a behavior.

use std::collections::BTreeSet;
use std::num::NonZeroUsize;

use crate::wire::{WireReader, WireWriter};
use crate::CodecError;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SpecError {
    #[error("invalid name {0:?}: names must be non-empty ascii identifiers")]
    InvalidName(String),
    #[error("ancestry must start with the behavior name {0:?}")]
    AncestryHead(String),
    #[error("duplicate ancestor {0:?}")]
    DuplicateAncestor(String),
    #[error("{0:?} is declared as both an action and a loop")]
    ActionLoopOverlap(String),
}

/// Name, ancestry and entry points of a behavior.
///
/// `ancestry` lists the behavior itself first and its most general ancestor
/// last. Discovery queries match any name in the ancestry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviorSpec {
    name: String,
    ancestry: Vec<String>,
    actions: BTreeSet<String>,
    loops: BTreeSet<String>,
    max_action_concurrency: Option<NonZeroUsize>,
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut bytes = s.bytes();
    match bytes.next() {
        Some(b) if b.is_ascii_alphabetic() || b == b'_' => {}
        _ => return false,
    }
    bytes.all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

impl BehaviorSpec {
    /// Builds and validates a spec. `parents` are the ancestors after the
    /// behavior itself, nearest first.
    pub fn new<I, A, L, S1, S2, S3>(
        name: &str,
        parents: I,
        actions: A,
        loops: L,
        max_action_concurrency: Option<NonZeroUsize>,
    ) -> Result<Self, SpecError>
    where
        I: IntoIterator<Item = S1>,
        A: IntoIterator<Item = S2>,
        L: IntoIterator<Item = S3>,
        S1: Into<String>,
        S2: Into<String>,
        S3: Into<String>,
    {
        let mut ancestry = vec![name.to_string()];
        ancestry.extend(parents.into_iter().map(Into::into));
        Self::from_parts(
            ancestry,
            actions.into_iter().map(Into::into).collect(),
            loops.into_iter().map(Into::into).collect(),
            max_action_concurrency,
        )
    }

    fn from_parts(
        ancestry: Vec<String>,
        actions: BTreeSet<String>,
        loops: BTreeSet<String>,
        max_action_concurrency: Option<NonZeroUsize>,
    ) -> Result<Self, SpecError> {
        let name = ancestry
            .first()
            .cloned()
            .ok_or_else(|| SpecError::InvalidName(String::new()))?;
        let mut seen = BTreeSet::new();
        for a in &ancestry {
            if !is_identifier(a) {
                return Err(SpecError::InvalidName(a.clone()));
            }
            if !seen.insert(a.as_str()) {
                if a == &name {
                    return Err(SpecError::AncestryHead(name));
                }
                return Err(SpecError::DuplicateAncestor(a.clone()));
            }
        }
        for n in actions.iter().chain(loops.iter()) {
            if !is_identifier(n) {
                return Err(SpecError::InvalidName(n.clone()));
            }
        }
        if let Some(both) = actions.intersection(&loops).next() {
            return Err(SpecError::ActionLoopOverlap(both.clone()));
        }
        Ok(Self {
            name,
            ancestry,
            actions,
            loops,
            max_action_concurrency,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn ancestry(&self) -> &[String] {
        &self.ancestry
    }

    pub fn actions(&self) -> &BTreeSet<String> {
        &self.actions
    }

    pub fn loops(&self) -> &BTreeSet<String> {
        &self.loops
    }

    pub fn max_action_concurrency(&self) -> Option<NonZeroUsize> {
        self.max_action_concurrency
    }

    /// True iff `name` is this behavior or one of its ancestors.
    pub fn is_a(&self, name: &str) -> bool {
        behavior_is_a(self, name)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = WireWriter::new();
        w.u32(self.ancestry.len() as u32);
        for a in &self.ancestry {
            w.field(a.as_bytes());
        }
        w.u32(self.actions.len() as u32);
        for a in &self.actions {
            w.field(a.as_bytes());
        }
        w.u32(self.loops.len() as u32);
        for l in &self.loops {
            w.field(l.as_bytes());
        }
        w.u32(self.max_action_concurrency.map_or(0, |n| n.get() as u32));
        w.into_inner()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = WireReader::new(bytes, 0);
        let spec = Self::read_from(&mut r)?;
        r.finish()?;
        Ok(spec)
    }

    pub(crate) fn read_from(r: &mut WireReader<'_>) -> Result<Self, CodecError> {
        let start = r.offset();
        let strings = |r: &mut WireReader<'_>| -> Result<Vec<String>, CodecError> {
            let n = r.u32()? as usize;
            // every entry needs at least its 4-byte length prefix
            if n > r.remaining() / 4 {
                return Err(CodecError::Truncated { offset: r.offset() });
            }
            (0..n).map(|_| r.str_field().map(str::to_string)).collect()
        };
        let ancestry = strings(r)?;
        let actions = strings(r)?.into_iter().collect();
        let loops = strings(r)?.into_iter().collect();
        let max = r.u32()?;
        Self::from_parts(ancestry, actions, loops, NonZeroUsize::new(max as usize)).map_err(|e| {
            CodecError::InvalidValue {
                offset: start,
                what: e.to_string(),
            }
        })
    }
}

/// True iff `name` appears in the spec's ancestry.
pub fn behavior_is_a(spec: &BehaviorSpec, name: &str) -> bool {
    spec.ancestry.iter().any(|a| a == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(name: &str, parents: &[&str]) -> BehaviorSpec {
        BehaviorSpec::new(name, parents.iter().copied(), ["fold"], Vec::<String>::new(), None).unwrap()
    }

    #[test]
    fn subtype_query_matches_ancestor() {
        let open = spec("OpenProteinFolder", &["ProteinFolder"]);
        assert!(behavior_is_a(&open, "ProteinFolder"));
        assert!(behavior_is_a(&open, "OpenProteinFolder"));
    }

    #[test]
    fn ancestor_does_not_match_subtype_query() {
        let base = spec("ProteinFolder", &[]);
        assert!(!behavior_is_a(&base, "OpenProteinFolder"));
    }

    #[test]
    fn self_membership() {
        assert!(behavior_is_a(&spec("X", &[]), "X"));
    }

    #[test]
    fn validation() {
        let none = Vec::<String>::new();
        assert_eq!(
            BehaviorSpec::new("A", ["B", "B"], none.clone(), none.clone(), None),
            Err(SpecError::DuplicateAncestor("B".into()))
        );
        assert_eq!(
            BehaviorSpec::new("A", ["A"], none.clone(), none.clone(), None),
            Err(SpecError::AncestryHead("A".into()))
        );
        assert!(matches!(
            BehaviorSpec::new("A", none.clone(), ["run"], ["run"], None),
            Err(SpecError::ActionLoopOverlap(_))
        ));
        assert!(matches!(
            BehaviorSpec::new("", none.clone(), none.clone(), none.clone(), None),
            Err(SpecError::InvalidName(_))
        ));
        assert!(matches!(
            BehaviorSpec::new("A", none.clone(), ["bad name"], none, None),
            Err(SpecError::InvalidName(_))
        ));
    }

    #[test]
    fn encode_round_trip() {
        let s = BehaviorSpec::new(
            "Open",
            ["Base", "Root"],
            ["square", "cube"],
            ["count"],
            NonZeroUsize::new(3),
        )
        .unwrap();
        assert_eq!(BehaviorSpec::decode(&s.encode()).unwrap(), s);
    }

    proptest! {
        // Extending an ancestry never removes a positive answer.
        #[test]
        fn is_a_is_monotone(
            names in proptest::collection::btree_set("[A-Z][a-z]{1,6}", 1..8),
            extra in proptest::collection::btree_set("[A-Z][a-z]{1,6}", 0..4),
        ) {
            let names: Vec<_> = names.into_iter().collect();
            let base = BehaviorSpec::new(&names[0], names[1..].iter().cloned(), Vec::<String>::new(), Vec::<String>::new(), None).unwrap();
            let mut wider = names[1..].to_vec();
            wider.extend(extra.into_iter().filter(|e| !names.contains(e)));
            let sub = BehaviorSpec::new(&names[0], wider, Vec::<String>::new(), Vec::<String>::new(), None).unwrap();
            for n in base.ancestry() {
                prop_assert!(behavior_is_a(&sub, n));
            }
        }
    }
}
