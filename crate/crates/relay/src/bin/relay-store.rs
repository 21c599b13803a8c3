use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use agentry_relay::{RelayConfig, RelayServer, DEFAULT_PORT};
use clap::Parser;

/// Registry and mailbox service for agentry deployments.
#[derive(Debug, Parser)]
#[command(name = "relay-store", version)]
struct Args {
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, default_value = "./relay-store-data")]
    data_dir: PathBuf,
    /// Keep all state in memory.
    #[arg(long)]
    no_persist: bool,
    /// Emulated round-trip time added to every request, in milliseconds.
    #[arg(long, default_value_t = 0)]
    inject_latency_ms: u64,
    /// Bytes per emulated round trip, in KiB. Larger transfers pay extra
    /// round trips.
    #[arg(long, default_value_t = 4096)]
    inject_window_kib: usize,
    #[arg(long, default_value_t = 10_000)]
    snapshot_every: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let config = RelayConfig {
        bind: SocketAddr::new(args.host, args.port),
        data_dir: (!args.no_persist).then_some(args.data_dir),
        inject_latency: Duration::from_millis(args.inject_latency_ms),
        inject_window: args.inject_window_kib * 1024,
        snapshot_every: args.snapshot_every,
    };
    match RelayServer::start(config) {
        Ok(server) => {
            println!("listening on {}", server.addr());
            server.wait();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("relay-store: {e}");
            ExitCode::FAILURE
        }
    }
}
