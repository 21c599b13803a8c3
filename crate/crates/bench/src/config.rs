use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use agentry::exchange::DistConfig;

use crate::deploy::AgentProgram;
use crate::BenchError;

/// Which exchange carries the messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Local,
    /// Relay store plus direct sockets between peers.
    DistDirect,
    /// Everything through the relay store.
    DistRelay,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Local => "local",
            Mode::DistDirect => "dist-direct",
            Mode::DistRelay => "dist-relay",
        }
    }

    pub fn dist_config(self) -> Option<DistConfig> {
        match self {
            Mode::Local => None,
            Mode::DistDirect => Some(DistConfig::default()),
            Mode::DistRelay => Some(DistConfig::relay_only()),
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "local" => Ok(Mode::Local),
            "dist-direct" | "direct" => Ok(Mode::DistDirect),
            "dist-relay" | "relay" => Ok(Mode::DistRelay),
            _ => Err(format!("unknown mode {s:?}; expected local, dist-direct or dist-relay")),
        }
    }
}

/// Payload passing in the chain scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassMode {
    Inline,
    Reference,
    Both,
}

impl PassMode {
    pub fn variants(self) -> Vec<bool> {
        match self {
            PassMode::Inline => vec![false],
            PassMode::Reference => vec![true],
            PassMode::Both => vec![false, true],
        }
    }
}

impl FromStr for PassMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "inline" => Ok(PassMode::Inline),
            "ref" | "reference" => Ok(PassMode::Reference),
            "both" => Ok(PassMode::Both),
            _ => Err(format!("unknown pass mode {s:?}; expected inline, ref or both")),
        }
    }
}

/// Handles sharing one mailbox, one mailbox each, or both for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Multiplex {
    On,
    Off,
    Compare,
}

impl Multiplex {
    pub fn variants(self) -> Vec<bool> {
        match self {
            Multiplex::On => vec![true],
            Multiplex::Off => vec![false],
            Multiplex::Compare => vec![true, false],
        }
    }
}

impl FromStr for Multiplex {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "on" => Ok(Multiplex::On),
            "off" => Ok(Multiplex::Off),
            "compare" => Ok(Multiplex::Compare),
            _ => Err(format!("unknown multiplex setting {s:?}; expected on, off or compare")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LauncherKind {
    InProcess,
    Subprocess,
    Both,
}

impl LauncherKind {
    pub fn variants(self) -> Vec<LauncherKind> {
        match self {
            LauncherKind::Both => vec![LauncherKind::InProcess, LauncherKind::Subprocess],
            k => vec![k],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LauncherKind::InProcess => "in-process",
            LauncherKind::Subprocess => "subprocess",
            LauncherKind::Both => "both",
        }
    }
}

impl FromStr for LauncherKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "in-process" | "inprocess" | "local" => Ok(LauncherKind::InProcess),
            "subprocess" | "process" => Ok(LauncherKind::Subprocess),
            "both" => Ok(LauncherKind::Both),
            _ => Err(format!("unknown launcher {s:?}; expected in-process, subprocess or both")),
        }
    }
}

/// Parameters of one scenario run. Scenarios read the fields they need;
/// [`BenchConfig::new`] fills in scenario-specific defaults.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub scenario: String,
    /// Agent counts to sweep (chain length for `chain`, workers for
    /// `throughput`).
    pub agents: Vec<usize>,
    /// Payload sizes in bytes, ascending.
    pub sizes: Vec<usize>,
    pub repetitions: usize,
    pub mode: Mode,
    /// Artificial delay added by the relay store to every request.
    pub inject_latency: Duration,
    pub csv: Option<PathBuf>,
    /// Actions per agent (`weak-scaling`), per run (`throughput`) or items
    /// (`pipeline`).
    pub actions: usize,
    pub action_time: Duration,
    /// Samples per payload size in `latency`.
    pub trials: usize,
    pub rounds: usize,
    pub pass: PassMode,
    pub multiplex: Multiplex,
    pub launcher: LauncherKind,
    /// Kill a stage mid-run in `pipeline`.
    pub kill: bool,
    pub max_restarts: u32,
    /// Executable for agents that run in their own process.
    pub program: Option<AgentProgram>,
}

pub const SCENARIOS: &[&str] = &[
    "startup",
    "weak-scaling",
    "latency",
    "throughput",
    "chain",
    "conversation",
    "memory",
    "pipeline",
    "supervision",
];

const KIB: usize = 1 << 10;
const MIB: usize = 1 << 20;

impl BenchConfig {
    pub fn new(scenario: &str) -> Self {
        let mut c = BenchConfig {
            scenario: scenario.to_string(),
            agents: vec![1],
            sizes: vec![0],
            repetitions: 5,
            mode: Mode::Local,
            inject_latency: Duration::ZERO,
            csv: None,
            actions: 1000,
            action_time: Duration::from_secs(1),
            trials: 1000,
            rounds: 10,
            pass: PassMode::Both,
            multiplex: Multiplex::On,
            launcher: LauncherKind::Both,
            kill: true,
            max_restarts: 3,
            program: None,
        };
        match scenario {
            "startup" => c.agents = vec![1, 64],
            "weak-scaling" => {
                c.agents = vec![1, 8, 64];
                c.actions = 30;
            }
            "latency" => {
                c.mode = Mode::DistDirect;
                c.sizes = vec![0, KIB, 10 * KIB, 100 * KIB, MIB];
            }
            "throughput" => {
                c.agents = vec![8];
                c.actions = 5000;
            }
            "chain" => {
                c.agents = vec![1, 4];
                c.sizes = vec![10 * MIB];
                c.inject_latency = Duration::from_millis(30);
            }
            "conversation" => c.sizes = vec![KIB],
            "memory" => {
                c.agents = vec![0, 8, 16, 32];
                c.repetitions = 3;
            }
            "pipeline" => {
                c.actions = 100;
                c.sizes = vec![200_000];
                c.mode = Mode::DistDirect;
            }
            "supervision" => {
                c.mode = Mode::DistDirect;
                c.repetitions = 3;
            }
            _ => {}
        }
        c
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if !SCENARIOS.contains(&self.scenario.as_str()) {
            return bad(format!("unknown scenario {:?}", self.scenario));
        }
        if self.repetitions < 3 {
            return bad(format!("repetitions must be at least 3, got {}", self.repetitions));
        }
        if self.agents.is_empty() || self.sizes.is_empty() {
            return bad("agent counts and payload sizes must not be empty".into());
        }
        if !self.sizes.windows(2).all(|w| w[0] <= w[1]) {
            return bad("payload sizes must be sorted ascending".into());
        }
        if self.scenario != "memory" && self.agents.contains(&0) {
            return bad(format!("{} needs at least one agent", self.scenario));
        }
        Ok(())
    }

    /// `key=value` pairs identifying a measurement in the CSV.
    pub fn params(&self, extra: &[(&str, String)]) -> String {
        let mut parts = vec![format!("mode={}", self.mode.name())];
        if !self.inject_latency.is_zero() {
            parts.push(format!("latency_ms={}", self.inject_latency.as_millis()));
        }
        parts.extend(extra.iter().map(|(k, v)| format!("{k}={v}")));
        parts.join(";")
    }
}

/// Parses `1024`, `10KB`, `10KiB`, `10MB`, `10MiB`, `1k`, `1M`.
pub fn parse_size(s: &str) -> Result<usize, String> {
    let s = s.trim();
    let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let n: usize = num.parse().map_err(|_| format!("bad size {s:?}"))?;
    let mult = match unit.to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kib" => KIB,
        "kb" => 1000,
        "m" | "mib" => MIB,
        "mb" => 1_000_000,
        _ => return Err(format!("bad size unit in {s:?}")),
    };
    n.checked_mul(mult).ok_or_else(|| format!("size {s:?} overflows"))
}
