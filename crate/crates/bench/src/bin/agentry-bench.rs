use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use agentry_bench::config::parse_size;
use agentry_bench::{scenarios, AgentProgram, BenchConfig, LauncherKind, Mode, Multiplex, PassMode};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "agentry-bench", version, about = "Desk-scale benchmarks for agentry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time to start agents and get a first ping back.
    Startup(Opts),
    /// Completion time of fixed-duration actions as agents are added.
    WeakScaling(Opts),
    /// Round-trip time of a no-op action by payload size.
    Latency(Opts),
    /// Actions per second through a pool of workers.
    Throughput(Opts),
    /// A payload forwarded along a chain of agents, inline or by reference.
    Chain(Opts),
    /// Back-and-forth exchange between two agents.
    Conversation(Opts),
    /// Resident memory as agents are added, per launcher.
    Memory(Opts),
    /// Four-stage pipeline in child processes with a stage killed mid-run.
    Pipeline(Opts),
    /// Restart behavior of a killed agent under load.
    Supervision(Opts),
    /// Runs one agent from the environment set by the subprocess launcher.
    #[command(hide = true)]
    Agent,
}

#[derive(Args)]
struct Opts {
    /// Agent counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    agents: Option<Vec<usize>>,
    /// Payload sizes, comma separated, e.g. 0,1KiB,10MiB.
    #[arg(long, value_delimiter = ',', value_parser = parse_size)]
    sizes: Option<Vec<usize>>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// local, dist-direct or dist-relay.
    #[arg(long)]
    mode: Option<Mode>,
    /// Delay added to every relay store operation.
    #[arg(long)]
    inject_latency_ms: Option<u64>,
    /// Write records to this CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Actions per agent, total actions or pipeline items, by scenario.
    #[arg(long)]
    actions: Option<usize>,
    /// Duration of one simulated action.
    #[arg(long)]
    action_ms: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    /// inline, reference or both.
    #[arg(long)]
    pass: Option<PassMode>,
    /// on, off or compare.
    #[arg(long)]
    multiplex: Option<Multiplex>,
    /// in-process, subprocess or both.
    #[arg(long)]
    launcher: Option<LauncherKind>,
    /// Do not kill a stage during the pipeline run.
    #[arg(long)]
    no_kill: bool,
    #[arg(long)]
    max_restarts: Option<u32>,
}

impl Opts {
    fn apply(self, c: &mut BenchConfig) {
        if let Some(v) = self.agents {
            c.agents = v;
        }
        if let Some(v) = self.sizes {
            c.sizes = v;
        }
        if let Some(v) = self.repetitions {
            c.repetitions = v;
        }
        if let Some(v) = self.mode {
            c.mode = v;
        }
        if let Some(v) = self.inject_latency_ms {
            c.inject_latency = Duration::from_millis(v);
        }
        c.csv = self.csv;
        if let Some(v) = self.actions {
            c.actions = v;
        }
        if let Some(v) = self.action_ms {
            c.action_time = Duration::from_millis(v);
        }
        if let Some(v) = self.trials {
            c.trials = v;
        }
        if let Some(v) = self.rounds {
            c.rounds = v;
        }
        if let Some(v) = self.pass {
            c.pass = v;
        }
        if let Some(v) = self.multiplex {
            c.multiplex = v;
        }
        if let Some(v) = self.launcher {
            c.launcher = v;
        }
        c.kill &= !self.no_kill;
        if let Some(v) = self.max_restarts {
            c.max_restarts = v;
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (scenario, opts) = match cli.command {
        Command::Agent => {
            let code = agentry::launch::agent_main(&agentry::builtin::registry());
            return ExitCode::from(u8::try_from(code).unwrap_or(1));
        }
        Command::Startup(o) => ("startup", o),
        Command::WeakScaling(o) => ("weak-scaling", o),
        Command::Latency(o) => ("latency", o),
        Command::Throughput(o) => ("throughput", o),
        Command::Chain(o) => ("chain", o),
        Command::Conversation(o) => ("conversation", o),
        Command::Memory(o) => ("memory", o),
        Command::Pipeline(o) => ("pipeline", o),
        Command::Supervision(o) => ("supervision", o),
    };
    let mut config = BenchConfig::new(scenario);
    opts.apply(&mut config);
    match AgentProgram::this_binary() {
        Ok(p) => config.program = Some(p),
        Err(e) => log::warn!("cannot locate this binary, child-process scenarios will fail: {e}"),
    }

    let report = match scenarios::run(&config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    for r in &report.records {
        println!("{:<14} {:<48} {:<28} {:>14.3} {}", r.scenario, r.params, r.metric, r.value, r.unit);
    }
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(path) = &config.csv {
        if let Err(e) = report.write_csv(path) {
            eprintln!("error: writing {}: {e}", path.display());
            return ExitCode::from(2);
        }
    }
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
