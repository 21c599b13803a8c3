//! Resident memory against agent count. In-process agents are measured as
//! this process's RSS; child-process agents add every child's RSS. Samples
//! are taken after a settle period; each count starts from a fresh manager.

use std::thread;
use std::time::Duration;

use agentry::launch::AgentBlueprint;
use agentry::{builtin, Handle};

use super::ping_all;
use crate::deploy::PROC;
use crate::mem::rss_bytes;
use crate::stats::slope;
use crate::{BenchConfig, BenchError, BenchResult, Deployment, DeploySpec, LauncherKind, Mode, Report};

const SETTLE: Duration = Duration::from_millis(300);

fn sample(c: &BenchConfig, kind: LauncherKind, n: usize) -> BenchResult<f64> {
    let subprocess = kind == LauncherKind::Subprocess;
    let spec = if subprocess {
        DeploySpec::for_mode(Mode::DistDirect).program(Some(super::program(c)?))
    } else {
        DeploySpec::for_mode(Mode::Local)
    };
    let d = Deployment::start(spec)?;
    let handles = (0..n)
        .map(|_| {
            if subprocess {
                d.manager.launch_with(AgentBlueprint::registered("Noop", ""), PROC)
            } else {
                d.manager.launch(builtin::noop(None))
            }
        })
        .collect::<Result<Vec<Handle>, _>>()?;
    ping_all(&handles)?;
    thread::sleep(SETTLE);
    let mut total = rss_bytes(None).ok_or_else(|| BenchError::Scenario("resident memory is not observable here".into()))?;
    for h in &handles {
        if let Some(pid) = d.instance(h)?.pid() {
            total += rss_bytes(Some(pid)).unwrap_or(0);
        }
    }
    Ok(total as f64)
}

pub fn run(c: &BenchConfig) -> BenchResult<Report> {
    let mut report = Report::default();
    let mut slopes = Vec::new();
    for kind in c.launcher.variants() {
        let mut points = Vec::new();
        for &n in &c.agents {
            let samples = (0..c.repetitions).map(|_| sample(c, kind, n)).collect::<BenchResult<Vec<_>>>()?;
            let params = format!("launcher={};n={n}", kind.name());
            let m = report.summary("memory", &params, "rss", "B", &samples);
            points.push((n as f64, m));
        }
        let per_agent = slope(&points);
        report.record("memory", &format!("launcher={}", kind.name()), "rss_per_agent", per_agent, "B");
        slopes.push((kind, per_agent));
    }
    if let [(LauncherKind::InProcess, inproc), (LauncherKind::Subprocess, sub)] = slopes[..] {
        report.check(
            "child-process agents cost more memory per agent than in-process ones",
            sub > inproc,
            format!("{:.0} KiB vs {:.0} KiB per agent", sub / 1024.0, inproc / 1024.0),
        );
    }
    Ok(report)
}
