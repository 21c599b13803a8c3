//! Four stages in child processes: generator, assembler, validator and
//! recorder, handing items over by reference. Optionally the assembler is
//! killed mid-run; every item must still reach the recorder exactly once.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use agentry::launch::AgentBlueprint;
use agentry::trace::TraceEvent;
use agentry::{Handle, Payload};

use super::{poll_until, u64_of};
use crate::deploy::PROC;
use crate::record::ms;
use crate::{BenchConfig, BenchError, BenchResult, Deployment, DeploySpec, Report};

const RUN_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, Default)]
struct TraceSummary {
    events: usize,
    malformed: usize,
    finished_actions: usize,
}

fn read_traces(dir: &Path) -> BenchResult<TraceSummary> {
    let mut s = TraceSummary::default();
    for entry in fs::read_dir(dir)? {
        let text = fs::read_to_string(entry?.path())?;
        for line in text.lines().filter(|l| l.starts_with('{')) {
            match TraceEvent::parse(line) {
                Some(e) => {
                    s.events += 1;
                    if e.event == "action-finish" {
                        s.finished_actions += 1;
                    }
                }
                None => s.malformed += 1,
            }
        }
    }
    Ok(s)
}

fn launch(d: &Deployment, name: &str, args: String) -> BenchResult<Handle> {
    let h = d
        .manager
        .launch_with(AgentBlueprint::registered(name, args), PROC)?
        .with_timeout(Duration::from_secs(30));
    h.ping()?;
    Ok(h)
}

fn count(recorder: &Handle) -> BenchResult<u64> {
    u64_of(&recorder.call_bytes("count", Vec::new())?)
}

pub fn run(c: &BenchConfig) -> BenchResult<Report> {
    let items = u32::try_from(c.actions).map_err(|_| BenchError::Config("too many items".into()))?;
    let size = c.sizes[0];
    let logs = tempfile::tempdir()?;
    let spec = DeploySpec {
        trace: true,
        log_dir: Some(logs.path().to_path_buf()),
        ..DeploySpec::for_mode(c.mode)
    }
    .latency(c.inject_latency)
    .program(Some(super::program(c)?));
    let d = Deployment::start(spec)?;

    let recorder = launch(&d, "Recorder", String::new())?;
    let validator = launch(&d, "Validator", recorder.target().to_string())?;
    let assembler = launch(&d, "Assembler", validator.target().to_string())?;
    let generator = launch(&d, "Generator", format!("{} {size}", assembler.target()))?;

    let t0 = Instant::now();
    let run = generator
        .with_timeout(RUN_TIMEOUT)
        .invoke("generate", Payload::Inline(items.to_be_bytes().to_vec()));
    let mut killed_at = None;
    if c.kill {
        let third = u64::from(items / 3);
        poll_until(RUN_TIMEOUT, || count(&recorder).map(|n| n >= third).unwrap_or(false));
        killed_at = Some(count(&recorder)?);
        d.instance(&assembler)?.kill()?;
    }
    let generated = run.wait()?;
    let elapsed = t0.elapsed();
    let generated = generated.as_inline().and_then(|b| b.try_into().ok()).map(u32::from_be_bytes);

    let recorded = count(&recorder)?;
    let ids_raw = recorder.call_bytes("ids", Vec::new())?;
    let ids: BTreeSet<u32> = ids_raw
        .chunks_exact(4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("chunks of 4")))
        .collect();
    let restarts = d.instance(&assembler)?.restarts();
    let all: BTreeSet<u32> = (0..items).collect();

    d.manager.close();
    let trace = read_traces(logs.path())?;

    let params = c.params(&[
        ("items", items.to_string()),
        ("size", size.to_string()),
        ("kill", c.kill.to_string()),
    ]);
    let mut report = Report::default();
    report.record("pipeline", &params, "completion_time", ms(elapsed), "ms");
    report.record("pipeline", &params, "items_recorded", recorded as f64, "count");
    report.record("pipeline", &params, "stage_restarts", restarts as f64, "count");
    report.record("pipeline", &params, "trace_events", trace.events as f64, "count");
    report.record("pipeline", &params, "trace_action_finishes", trace.finished_actions as f64, "count");
    if let Some(k) = killed_at {
        report.record("pipeline", &params, "killed_after_items", k as f64, "count");
    }
    report.check(
        format!("all {items} items recorded exactly once"),
        generated == Some(items) && recorded == u64::from(items) && ids == all,
        format!("{recorded} recorded, {} distinct ids", ids.len()),
    );
    if c.kill {
        report.check("killed stage was restarted", restarts >= 1, format!("{restarts} restart(s)"));
    }
    report.check(
        "stage traces parse",
        trace.malformed == 0 && trace.events > 0,
        format!("{} events, {} malformed lines", trace.events, trace.malformed),
    );
    Ok(report)
}
