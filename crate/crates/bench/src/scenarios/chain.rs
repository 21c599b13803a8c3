//! Action chains: a payload is forwarded through n agents and resolved by
//! the last one. Envelopes always cross the relay store; with references the
//! bytes move once, peer to peer, from the submitter to the last agent.

use std::time::{Duration, Instant};

use agentry::exchange::DistConfig;
use agentry::{builtin, EntityId, Handle, Payload};
use rand::{RngCore, SeedableRng};

use super::u64_of;
use crate::record::ms;
use crate::{BenchConfig, BenchError, BenchResult, Deployment, DeploySpec, Mode, Report};

const CALL_TIMEOUT: Duration = Duration::from_secs(120);

fn start_chain(d: &Deployment, n: usize) -> BenchResult<Handle> {
    let mut next: Option<EntityId> = None;
    let mut head = None;
    for _ in 0..n {
        let h = d.manager.launch(builtin::chain_link(next))?;
        h.ping()?;
        next = Some(h.target());
        head = Some(h);
    }
    Ok(head.expect("n > 0").with_timeout(CALL_TIMEOUT))
}

pub fn run(c: &BenchConfig) -> BenchResult<Report> {
    // envelopes are always relayed whatever mode was asked for
    let c = &BenchConfig {
        mode: Mode::DistRelay,
        ..c.clone()
    };
    let spec = DeploySpec {
        dist: Some(DistConfig {
            listen: true,
            ..DistConfig::relay_only()
        }),
        ..DeploySpec::for_mode(c.mode)
    }
    .latency(c.inject_latency);
    let d = Deployment::start(spec)?;
    let depot = d.manager.router().depot();
    let mut rng = rand::rngs::StdRng::seed_from_u64(7);

    let mut report = Report::default();
    for &n in &c.agents {
        let head = start_chain(&d, n)?;
        for &size in &c.sizes {
            let mut data = vec![0u8; size];
            rng.fill_bytes(&mut data);
            let mut medians = Vec::new();
            for by_ref in c.pass.variants() {
                let params = c.params(&[
                    ("n", n.to_string()),
                    ("size", size.to_string()),
                    ("pass", if by_ref { "ref" } else { "inline" }.to_string()),
                ]);
                let mut samples = Vec::with_capacity(c.repetitions);
                let mut per_hop = Vec::new();
                let mut transfers = Vec::new();
                let mut store_bytes = 0u64;
                for _ in 0..c.repetitions {
                    let bytes = data.clone();
                    let before = d.store_stats();
                    let served_before = depot.stats().served;
                    let t0 = Instant::now();
                    let payload = if by_ref {
                        Payload::Reference(depot.proxy(bytes).map_err(|e| BenchError::Scenario(e.to_string()))?)
                    } else {
                        Payload::Inline(bytes)
                    };
                    let out = head.call("forward", payload.clone())?;
                    samples.push(ms(t0.elapsed()));
                    let len = u64_of(out.as_inline().unwrap_or_default())?;
                    if len != size as u64 {
                        return Err(BenchError::Scenario(format!("chain returned {len} bytes, sent {size}")));
                    }
                    if let Payload::Reference(r) = &payload {
                        depot.release(&r.object_id);
                    }
                    let s = d.store_stats().since(&before);
                    store_bytes = s.put_msg_bytes + s.polled_bytes + s.obj_put_bytes + s.obj_get_bytes;
                    per_hop.push(s.put_msg_bytes as f64 / s.put_msg.max(1) as f64);
                    transfers.push(depot.stats().served - served_before + s.obj_get);
                }
                let median = report.summary("chain", &params, "rtt", "ms", &samples);
                report.record("chain", &params, "store_bytes", store_bytes as f64, "B");
                let worst_hop = per_hop.iter().copied().fold(0.0, f64::max);
                report.record("chain", &params, "relay_bytes_per_hop.max", worst_hop, "B");
                let worst_transfers = transfers.iter().copied().max().unwrap_or(0);
                report.record("chain", &params, "object_transfers.max", worst_transfers as f64, "count");
                if by_ref && n > 1 {
                    report.check(
                        format!("{n}-agent reference chain: relay bytes per hop under 1 KiB"),
                        worst_hop < 1024.0,
                        format!("worst {worst_hop:.0} B per relayed message"),
                    );
                    report.check(
                        format!("{n}-agent reference chain: exactly one object transfer"),
                        transfers.iter().all(|&t| t == 1),
                        format!("transfers per run {transfers:?}"),
                    );
                }
                medians.push(median);
            }
            if medians.len() == 2 {
                let saving = 1.0 - medians[1] / medians[0];
                let params = c.params(&[("n", n.to_string()), ("size", size.to_string())]);
                report.record("chain", &params, "reference_saving", saving, "ratio");
                if n == 1 && !c.inject_latency.is_zero() {
                    report.check(
                        format!("{size} B no-op by reference at least 50% faster than relayed inline"),
                        saving >= 0.5,
                        format!("{:.1}% faster ({:.1} vs {:.1} ms)", saving * 100.0, medians[1], medians[0]),
                    );
                }
            }
        }
        d.manager.shutdown(head.target(), false)?;
    }
    Ok(report)
}
