//! Lifecycle trace: one JSON object per line.

use std::io::Write;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use agentry_core::EntityId;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Microseconds since the Unix epoch.
    pub ts_us: u64,
    pub agent: String,
    pub event: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ok: Option<bool>,
}

impl TraceEvent {
    pub fn parse(line: &str) -> Option<TraceEvent> {
        serde_json::from_str(line.trim()).ok()
    }
}

type Emit = Arc<dyn Fn(&str) + Send + Sync>;

/// Destination for trace lines. The default discards them.
#[derive(Clone, Default)]
pub struct TraceSink(Option<Emit>);

impl std::fmt::Debug for TraceSink {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(if self.0.is_some() { "TraceSink(on)" } else { "TraceSink(off)" })
    }
}

impl TraceSink {
    pub fn off() -> Self {
        Self(None)
    }

    /// Lines go to the `agentry::trace` log target at info level.
    pub fn log() -> Self {
        Self(Some(Arc::new(|line| log::info!(target: "agentry::trace", "{line}"))))
    }

    pub fn writer<W: Write + Send + 'static>(w: W) -> Self {
        let w = Mutex::new(w);
        Self(Some(Arc::new(move |line| {
            let mut w = w.lock();
            let _ = writeln!(w, "{line}");
            let _ = w.flush();
        })))
    }

    /// Keeps lines in memory.
    pub fn memory() -> (Self, Arc<Mutex<Vec<String>>>) {
        let lines = Arc::new(Mutex::new(Vec::new()));
        let sink = lines.clone();
        (Self(Some(Arc::new(move |line| sink.lock().push(line.to_string())))), lines)
    }

    pub fn is_on(&self) -> bool {
        self.0.is_some()
    }

    pub(crate) fn emit(&self, agent: &EntityId, event: &str, name: Option<&str>, ok: Option<bool>) {
        let Some(f) = &self.0 else { return };
        let ts_us = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_micros() as u64)
            .unwrap_or(0);
        let ev = TraceEvent {
            ts_us,
            agent: agent.to_string(),
            event: event.to_string(),
            name: name.map(str::to_string),
            ok,
        };
        if let Ok(line) = serde_json::to_string(&ev) {
            f(&line);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use agentry_core::Role;

    #[test]
    fn lines_parse_back() {
        let (sink, lines) = TraceSink::memory();
        let id = EntityId::random(Role::Agent);
        sink.emit(&id, "action-finish", Some("square"), Some(true));
        sink.emit(&id, "setup", None, None);
        let lines = lines.lock();
        let a = TraceEvent::parse(&lines[0]).unwrap();
        assert_eq!(a.agent, id.to_string());
        assert_eq!(a.name.as_deref(), Some("square"));
        assert_eq!(a.ok, Some(true));
        assert_eq!(TraceEvent::parse(&lines[1]).unwrap().event, "setup");
        assert!(!lines[1].contains("name"));
        assert_eq!(TraceEvent::parse("not json"), None);
    }
}
