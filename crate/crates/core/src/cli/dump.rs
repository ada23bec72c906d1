//! Line-oriented trace dump format.
//!
//! ```text
//! # weaver-trace scenario=<digest> width=<bits>
//! 0 t1 issue
//! 1 dma write 512 99
//! 2 sched switch 0 t2
//! 3 sched switch 0 idle
//! ```

use thiserror::Error;

use crate::machine::{Action, AgentId, Event, EventSeq};
use crate::program::{MicroKind, Scenario};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum DumpError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("trace was recorded for scenario {found:016x}, not {expected:016x}")]
    ScenarioMismatch { expected: u64, found: u64 },
    #[error("trace was recorded at width {found}, scenario uses {expected}")]
    WidthMismatch { expected: u32, found: u32 },
}

pub fn header(scenario: &Scenario) -> String {
    format!("# weaver-trace scenario={:016x} width={}", scenario.digest(), scenario.width.bits())
}

pub fn render_event(scenario: &Scenario, e: &Event) -> String {
    match (e.agent, e.action) {
        (AgentId::Thread(t), Action::Micro(k)) => format!("{} {}", scenario.threads[t.0].name, k.name()),
        (AgentId::Device(d), Action::DeviceWrite { target, value }) => {
            format!("{} write {target} {value}", scenario.devices[d.0].name)
        }
        (AgentId::Scheduler, Action::Switch { core, thread }) => {
            let who = thread.map_or("idle", |t| scenario.threads[t.0].name.as_str());
            format!("sched switch {} {who}", core.0)
        }
        _ => format!("{e:?}"),
    }
}

pub fn render_trace(scenario: &Scenario, seq: &EventSeq) -> String {
    let mut out = header(scenario);
    out.push('\n');
    for (i, e) in seq.iter().enumerate() {
        out.push_str(&format!("{i} {}\n", render_event(scenario, e)));
    }
    out
}

/// Parse a dump against `scenario`. Blank lines and other `#` lines are
/// ignored; the header, when present, must match the scenario.
pub fn parse_trace(scenario: &Scenario, text: &str) -> Result<EventSeq, DumpError> {
    let mut seq = EventSeq::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let bad = |message: String| DumpError::Malformed { line, message };
        let raw = raw.trim();
        if let Some(rest) = raw.strip_prefix("# weaver-trace") {
            check_header(scenario, rest).map_err(|e| match e {
                DumpError::Malformed { message, .. } => bad(message),
                other => other,
            })?;
            continue;
        }
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = raw.split_whitespace().collect();
        let index: usize = f[0].parse().map_err(|_| bad(format!("bad index `{}`", f[0])))?;
        if index != seq.len() {
            return Err(bad(format!("expected index {}, found {index}", seq.len())));
        }
        let num = |s: Option<&&str>, what: &str| -> Result<u64, DumpError> {
            s.ok_or_else(|| bad(format!("missing {what}")))?.parse().map_err(|_| bad(format!("bad {what}")))
        };
        let agent = *f.get(1).ok_or_else(|| bad("missing agent".into()))?;
        let event = if agent == "sched" {
            if f.get(2) != Some(&"switch") || f.len() != 5 {
                return Err(bad("expected `sched switch CORE THREAD|idle`".into()));
            }
            let core = num(f.get(3), "core")? as usize;
            let thread = match f[4] {
                "idle" => None,
                name => Some(scenario.thread_id(name).ok_or_else(|| bad(format!("unknown thread `{name}`")))?.0),
            };
            Event::switch(core, thread)
        } else if let Some(t) = scenario.thread_id(agent) {
            if f.len() != 3 {
                return Err(bad("expected `THREAD MICRO-OP`".into()));
            }
            let kind = MicroKind::from_name(f[2]).ok_or_else(|| bad(format!("unknown micro-op `{}`", f[2])))?;
            Event::micro(t.0, kind)
        } else if let Some(d) = scenario.devices.iter().position(|d| d.name == agent) {
            if f.get(2) != Some(&"write") || f.len() != 5 {
                return Err(bad("expected `DEVICE write ADDR VALUE`".into()));
            }
            let target = u32::try_from(num(f.get(3), "address")?).map_err(|_| bad("address too large".into()))?;
            Event::device_write(d, target, num(f.get(4), "value")?)
        } else {
            return Err(bad(format!("unknown agent `{agent}`")));
        };
        seq.push(event);
    }
    Ok(seq)
}

fn check_header(scenario: &Scenario, rest: &str) -> Result<(), DumpError> {
    let bad = |message: &str| DumpError::Malformed { line: 0, message: message.to_string() };
    for kv in rest.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad("malformed header"))?;
        match k {
            "scenario" => {
                let found = u64::from_str_radix(v, 16).map_err(|_| bad("bad scenario digest"))?;
                if found != scenario.digest() {
                    return Err(DumpError::ScenarioMismatch { expected: scenario.digest(), found });
                }
            }
            "width" => {
                let found: u32 = v.parse().map_err(|_| bad("bad width"))?;
                if found != scenario.width.bits() {
                    return Err(DumpError::WidthMismatch { expected: scenario.width.bits(), found });
                }
            }
            _ => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::builtin;

    #[test]
    fn round_trip() {
        let sc = builtin("device-clobber").unwrap();
        let seq: EventSeq =
            vec![Event::micro(0, MicroKind::BoundaryOnly), Event::device_write(0, 512, 99), Event::switch(0, None)]
                .into();
        let text = render_trace(&sc, &seq);
        assert!(text.contains("1 dma write 512 99"));
        assert_eq!(parse_trace(&sc, &text).unwrap(), seq);
    }

    #[test]
    fn rejects_wrong_scenario() {
        let a = builtin("lost-update").unwrap();
        let b = builtin("spinlock-increment").unwrap();
        let text = render_trace(&a, &EventSeq::new());
        assert!(matches!(parse_trace(&b, &text), Err(DumpError::ScenarioMismatch { .. })));
    }

    #[test]
    fn rejects_garbage() {
        let sc = builtin("lost-update").unwrap();
        for text in ["0 t9 issue", "1 t1 issue", "0 t1 fly", "0 sched switch x t1", "zero t1 issue", "0 t1"] {
            assert!(parse_trace(&sc, text).is_err(), "{text}");
        }
    }
}
