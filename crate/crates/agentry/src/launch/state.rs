//! Per-agent checkpoint storage on the local file system.
//!
//! Layout: `<root>/<agent-id>/<key>`. Writes go to a temporary file that is
//! synced and renamed over the key, so a crash leaves either the old or the
//! new value.

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use agentry_core::EntityId;

#[derive(Debug, thiserror::Error)]
pub enum StateError {
    #[error("invalid key {0:?}")]
    InvalidKey(String),
    #[error("no value for key {0:?}")]
    NotFound(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone)]
pub struct StateStore {
    dir: PathBuf,
}

fn check_key(key: &str) -> Result<(), StateError> {
    let ok = !key.is_empty()
        && key.len() <= 200
        && !key.starts_with('.')
        && key
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.'));
    if ok {
        Ok(())
    } else {
        Err(StateError::InvalidKey(key.to_string()))
    }
}

impl StateStore {
    pub fn open(root: &Path, agent: EntityId) -> Result<StateStore, StateError> {
        let dir = root.join(agent.to_string());
        fs::create_dir_all(&dir)?;
        Ok(StateStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn set(&self, key: &str, value: &[u8]) -> Result<(), StateError> {
        check_key(key)?;
        let tmp = self.dir.join(format!(".{key}.{}.tmp", uuid::Uuid::new_v4().simple()));
        {
            let mut f = File::create(&tmp)?;
            f.write_all(value)?;
            f.sync_all()?;
        }
        if let Err(e) = fs::rename(&tmp, self.dir.join(key)) {
            let _ = fs::remove_file(&tmp);
            return Err(e.into());
        }
        if let Ok(d) = File::open(&self.dir) {
            let _ = d.sync_all();
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<Vec<u8>, StateError> {
        check_key(key)?;
        match fs::read(self.dir.join(key)) {
            Ok(v) => Ok(v),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StateError::NotFound(key.to_string())),
            Err(e) => Err(e.into()),
        }
    }

    pub fn delete(&self, key: &str) -> Result<(), StateError> {
        check_key(key)?;
        match fs::remove_file(self.dir.join(key)) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StateError::NotFound(key.to_string())),
            Err(e) => Err(e.into()),
        }
    }

    pub fn keys(&self) -> Result<Vec<String>, StateError> {
        let mut keys = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name();
            if let Some(n) = name.to_str() {
                if !n.starts_with('.') {
                    keys.push(n.to_string());
                }
            }
        }
        keys.sort();
        Ok(keys)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use agentry_core::Role;

    #[test]
    fn set_get_delete_keys() {
        let root = tempfile::tempdir().unwrap();
        let s = StateStore::open(root.path(), EntityId::random(Role::Agent)).unwrap();
        assert!(matches!(s.get("count"), Err(StateError::NotFound(_))));
        s.set("count", b"1").unwrap();
        s.set("count", b"2").unwrap();
        s.set("other.bin", b"").unwrap();
        assert_eq!(s.get("count").unwrap(), b"2");
        assert_eq!(s.keys().unwrap(), ["count", "other.bin"]);
        s.delete("count").unwrap();
        assert!(matches!(s.delete("count"), Err(StateError::NotFound(_))));
        for bad in ["", "../x", "a/b", ".hidden"] {
            assert!(matches!(s.set(bad, b"x"), Err(StateError::InvalidKey(_))));
        }
    }

    #[test]
    fn reopen_sees_values() {
        let root = tempfile::tempdir().unwrap();
        let id = EntityId::random(Role::Agent);
        StateStore::open(root.path(), id).unwrap().set("k", b"v").unwrap();
        assert_eq!(StateStore::open(root.path(), id).unwrap().get("k").unwrap(), b"v");
    }
}
