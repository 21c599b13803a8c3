#![allow(dead_code)]

use std::sync::Arc;
use std::time::{Duration, Instant};

use agentry::exchange::{DistConfig, DistExchange, Exchange, LocalExchange};
use agentry_relay::{RelayConfig, RelayServer};

pub fn relay() -> RelayServer {
    RelayServer::start(RelayConfig::default()).expect("start relay store")
}

pub fn relay_with_latency(latency: Duration) -> RelayServer {
    RelayServer::start(RelayConfig {
        inject_latency: latency,
        ..RelayConfig::default()
    })
    .expect("start relay store")
}

/// An exchange flavor under test. Keeps the relay store alive.
pub struct Flavor {
    pub name: &'static str,
    pub exchange: Arc<dyn Exchange>,
    pub server: Option<RelayServer>,
}

pub fn local() -> Flavor {
    Flavor {
        name: "local",
        exchange: Arc::new(LocalExchange::new()),
        server: None,
    }
}

pub fn dist(config: DistConfig, name: &'static str) -> Flavor {
    let server = relay();
    let exchange = DistExchange::connect(server.addr(), config).expect("connect");
    Flavor {
        name,
        exchange: Arc::new(exchange),
        server: Some(server),
    }
}

pub fn flavors() -> Vec<Flavor> {
    vec![
        local(),
        dist(DistConfig::default(), "dist-hybrid"),
        dist(DistConfig::relay_only(), "dist-relay"),
    ]
}

pub fn eventually(timeout: Duration, mut f: impl FnMut() -> bool) -> bool {
    let deadline = Instant::now() + timeout;
    while Instant::now() < deadline {
        if f() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    f()
}
