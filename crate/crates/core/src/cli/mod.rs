//! Command-line front end: `explore`, `replay` and `parse-check`.
//!
//! Exit codes: 0 when no violation was found, 1 when some monitor failed,
//! 2 for usage, parse and corrupt-input errors.

pub mod dump;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::explorer::{explore, replay, ExploreConfig, ExploreReport, Mode, Verdict};
use crate::machine::{EventSeq, ThreadId, WordWidth};
use crate::program::{builtin, builtin_names, parse_with_width, Scenario};
use crate::specmon::MonitorSet;

pub const WIDTH_ENV: &str = "WEAVER_WORD_WIDTH";

#[derive(Parser, Debug)]
#[command(name = "weaver", version, about = "Explore interleavings of shared-memory programs and check trace monitors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Explore event sequences and judge every edge.
    Explore(ExploreArgs),
    /// Re-judge one dumped event sequence.
    Replay(ReplayArgs),
    /// Parse a scenario and print its resolved address map.
    ParseCheck { file: PathBuf },
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct Source {
    /// One of the built-in scenarios.
    #[arg(long)]
    builtin: Option<String>,
    /// A scenario file.
    #[arg(long)]
    file: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    JsonLines,
}

#[derive(Args, Debug)]
struct ExploreArgs {
    #[command(flatten)]
    source: Source,
    /// Bounded depth-first search of every sequence (the default).
    #[arg(long, conflicts_with = "random")]
    exhaustive: bool,
    /// Seeded uniform random walks instead.
    #[arg(long, requires_all = ["seed", "walks", "len"])]
    random: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    walks: Option<usize>,
    /// Events per walk.
    #[arg(long)]
    len: Option<usize>,
    /// Sequence length bound; defaults to the scenario's `max-events`.
    #[arg(long)]
    max_events: Option<usize>,
    /// State budget per search partition; defaults to the scenario's `max-states`.
    #[arg(long)]
    max_states: Option<usize>,
    /// Disable visited-state deduplication.
    #[arg(long)]
    no_dedup: bool,
    /// Comma-separated monitor names, or `all`.
    #[arg(long, default_value = "all")]
    monitors: String,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Directory receiving one dump per counterexample and terminal witness.
    #[arg(long)]
    dump_traces: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    #[command(flatten)]
    source: Source,
    /// Dump file to replay.
    trace: PathBuf,
    #[arg(long, default_value = "all")]
    monitors: String,
    /// Print the gateway and call-depth monitors at every index.
    #[arg(long)]
    timeline: bool,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

/// Entry point for the binary.
pub fn main() -> ExitCode {
    let code = run(std::env::args_os(), &mut std::io::stdout().lock(), &mut std::io::stderr().lock());
    ExitCode::from(code)
}

/// Run with explicit arguments (including the program name) and streams.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::Explore(a) => cmd_explore(a, out),
        Command::Replay(a) => cmd_replay(a, out),
        Command::ParseCheck { file } => cmd_parse_check(&file, out),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            2
        }
    }
}

fn default_width() -> Result<WordWidth, String> {
    match std::env::var(WIDTH_ENV) {
        Ok(v) => v
            .trim()
            .parse::<u32>()
            .ok()
            .and_then(WordWidth::new)
            .ok_or_else(|| format!("{WIDTH_ENV}={v} is not a width in 1..=64")),
        Err(_) => Ok(WordWidth::default()),
    }
}

fn load(source: &Source) -> Result<Scenario, String> {
    let width = default_width()?;
    let (text, origin) = match (&source.builtin, &source.file) {
        (Some(name), _) => {
            builtin(name)
                .map_err(|e| format!("{e} (available: {})", builtin_names().collect::<Vec<_>>().join(", ")))?;
            (crate::program::builtin_source(name).expect("checked").to_string(), name.clone())
        }
        (None, Some(path)) => {
            let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
            let text = String::from_utf8(bytes).map_err(|e| {
                crate::program::parse_bytes(e.as_bytes()).err().map_or_else(|| e.to_string(), |p| p.to_string())
            });
            (text.map_err(|m| format!("{}: {m}", path.display()))?, path.display().to_string())
        }
        (None, None) => return Err("no scenario given".into()),
    };
    parse_with_width(&text, width).map_err(|e| format!("{origin}: {e}"))
}

fn cmd_explore(a: ExploreArgs, out: &mut dyn Write) -> Result<u8, String> {
    let scenario = load(&a.source)?;
    let monitors = MonitorSet::parse_list(&a.monitors)?;
    let max_events = a.max_events.unwrap_or(scenario.max_events);
    let mut config = if a.random {
        let len = a.len.expect("required by clap");
        ExploreConfig::random(a.seed.expect("required"), a.walks.expect("required"), len)
    } else {
        ExploreConfig::exhaustive(max_events)
    };
    config.max_events = config.max_events.max(max_events);
    config.max_states = a.max_states.unwrap_or(scenario.max_states);
    config.dedup = !a.no_dedup;
    config.workers = a.workers;
    let report = explore(&scenario, &config, &monitors).map_err(|e| e.to_string())?;

    if let Some(dir) = &a.dump_traces {
        dump_report(&scenario, &report, dir)?;
    }
    let io = |e: std::io::Error| e.to_string();
    match a.format {
        Format::Text => write_text_report(&scenario, &config, &report, out).map_err(io)?,
        Format::JsonLines => write_json_report(&scenario, &config, &report, out).map_err(io)?,
    }
    Ok(if report.is_clean() { 0 } else { 1 })
}

fn dump_report(scenario: &Scenario, report: &ExploreReport, dir: &Path) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let write = |name: String, seq: &EventSeq| {
        let path = dir.join(name);
        std::fs::write(&path, dump::render_trace(scenario, seq)).map_err(|e| format!("{}: {e}", path.display()))
    };
    for (k, c) in report.violations.iter().enumerate() {
        write(format!("violation-{k:03}-{}.trace", c.monitor), &c.sequence)?;
    }
    for t in &report.terminal_states {
        write(format!("terminal-{:016x}.trace", t.hash), &t.witness)?;
    }
    Ok(())
}

fn mode_label(config: &ExploreConfig) -> String {
    match config.mode {
        Mode::Exhaustive => {
            format!("exhaustive, max {} events, dedup {}", config.max_events, if config.dedup { "on" } else { "off" })
        }
        Mode::Random { seed, walks, len } => format!("random, seed {seed}, {walks} walks of up to {len} events"),
    }
}

fn write_sequence(scenario: &Scenario, seq: &EventSeq, out: &mut dyn Write) -> std::io::Result<()> {
    for (i, e) in seq.iter().enumerate() {
        writeln!(out, "    {i} {}", dump::render_event(scenario, e))?;
    }
    Ok(())
}

fn write_text_report(
    scenario: &Scenario,
    config: &ExploreConfig,
    r: &ExploreReport,
    out: &mut dyn Write,
) -> std::io::Result<()> {
    writeln!(out, "scenario {} ({})", scenario.name, mode_label(config))?;
    writeln!(out, "states visited: {}", r.states_visited)?;
    writeln!(out, "sequences explored: {}", r.sequences_explored)?;
    writeln!(out, "terminal states: {}", r.terminal_states.len())?;
    writeln!(out, "truncated: {}", if r.truncated { "yes" } else { "no" })?;
    for g in &scenario.globals {
        let hist = r.terminal_values(scenario, &g.name);
        if hist.is_empty() {
            continue;
        }
        let parts: Vec<String> = hist.iter().map(|(v, n)| format!("{v} -> {n}")).collect();
        writeln!(out, "final {}: {}", g.name, parts.join(", "))?;
    }
    for o in &r.observations {
        writeln!(out, "observation {} (seen {} times): {}", o.kind, o.count, o.message)?;
        writeln!(out, "  witness, {} events:", o.witness.len())?;
        write_sequence(scenario, &o.witness, out)?;
    }
    for c in &r.violations {
        writeln!(out, "violation [{}] at index {}: {}", c.monitor, c.index, c.message)?;
        write_sequence(scenario, &c.sequence, out)?;
    }
    if r.is_clean() {
        writeln!(out, "result: clean")
    } else {
        writeln!(out, "result: {} violation(s)", r.violations.len())
    }
}

fn rendered(scenario: &Scenario, seq: &EventSeq) -> Vec<String> {
    seq.iter().map(|e| dump::render_event(scenario, e)).collect()
}

fn write_json_report(
    scenario: &Scenario,
    config: &ExploreConfig,
    r: &ExploreReport,
    out: &mut dyn Write,
) -> std::io::Result<()> {
    let mut line = |v: serde_json::Value| writeln!(out, "{v}");
    line(json!({
        "type": "summary",
        "scenario": scenario.name,
        "digest": format!("{:016x}", scenario.digest()),
        "config": config,
        "states_visited": r.states_visited,
        "sequences_explored": r.sequences_explored,
        "terminal_states": r.terminal_states.len(),
        "truncated": r.truncated,
        "violations": r.violations.len(),
    }))?;
    for g in &scenario.globals {
        let hist = r.terminal_values(scenario, &g.name);
        if !hist.is_empty() {
            let values: serde_json::Map<String, serde_json::Value> =
                hist.iter().map(|(v, n)| (v.to_string(), json!(n))).collect();
            line(json!({"type": "terminal-histogram", "global": g.name, "values": values}))?;
        }
    }
    for o in &r.observations {
        line(json!({
            "type": "observation",
            "kind": o.kind,
            "message": o.message,
            "count": o.count,
            "index": o.index,
            "witness": rendered(scenario, &o.witness),
        }))?;
    }
    for c in &r.violations {
        line(json!({
            "type": "violation",
            "monitor": c.monitor,
            "message": c.message,
            "index": c.index,
            "sequence": rendered(scenario, &c.sequence),
        }))?;
    }
    Ok(())
}

fn cmd_replay(a: ReplayArgs, out: &mut dyn Write) -> Result<u8, String> {
    let scenario = load(&a.source)?;
    let monitors = MonitorSet::parse_list(&a.monitors)?;
    let text = std::fs::read_to_string(&a.trace).map_err(|e| format!("{}: {e}", a.trace.display()))?;
    let seq = dump::parse_trace(&scenario, &text).map_err(|e| format!("{}: {e}", a.trace.display()))?;
    let verdict = replay(&scenario, &seq, &monitors).map_err(|e| format!("{}: {e}", a.trace.display()))?;
    let io = |e: std::io::Error| e.to_string();
    match a.format {
        Format::Text => write_text_verdict(&scenario, &seq, &verdict, a.timeline, out).map_err(io)?,
        Format::JsonLines => write_json_verdict(&scenario, &seq, &verdict, a.timeline, out).map_err(io)?,
    }
    Ok(if verdict.is_clean() { 0 } else { 1 })
}

fn timeline_row(scenario: &Scenario, verdict: &Verdict, i: usize) -> (Vec<(String, u8, Vec<String>)>, Vec<String>) {
    let st = &verdict.monitor_states[i];
    let gateways = scenario
        .gateways
        .iter()
        .zip(st.gateways())
        .map(|(gw, gs)| {
            let owners =
                gs.owns.iter().enumerate().filter(|(_, &o)| o).map(|(t, _)| scenario.threads[t].name.clone()).collect();
            (gw.name.clone(), gs.g as u8, owners)
        })
        .collect();
    let mut depths = Vec::new();
    for (t, per) in st.fdepth().iter().enumerate() {
        for (f, d) in per.iter().enumerate() {
            let program = scenario.program(ThreadId(t));
            depths.push(format!("{}.{}={d}", scenario.threads[t].name, program.functions[f].name));
        }
    }
    (gateways, depths)
}

fn write_text_verdict(
    scenario: &Scenario,
    seq: &EventSeq,
    verdict: &Verdict,
    timeline: bool,
    out: &mut dyn Write,
) -> std::io::Result<()> {
    writeln!(out, "scenario {}, {} events", scenario.name, seq.len())?;
    if timeline {
        for i in 0..=seq.len() {
            let event = if i == 0 { "-".to_string() } else { dump::render_event(scenario, &seq[i - 1]) };
            let (gws, depths) = timeline_row(scenario, verdict, i);
            let mut cols = vec![format!("{i:>4} {event:<28}")];
            for (name, g, owners) in gws {
                cols.push(format!("G({name})={g} owns=[{}]", owners.join(",")));
            }
            if !depths.is_empty() {
                cols.push(format!("fdepth {}", depths.join(" ")));
            }
            writeln!(out, "{}", cols.join("  "))?;
        }
    }
    for (i, o) in &verdict.observations {
        writeln!(out, "observation {} at index {i}: {}", o.kind, o.message)?;
    }
    for (i, v) in &verdict.violations {
        writeln!(out, "violation [{}] at index {i}: {}", v.monitor, v.message)?;
    }
    if verdict.is_clean() {
        writeln!(out, "result: clean")
    } else {
        writeln!(out, "result: {} violation(s)", verdict.violations.len())
    }
}

fn write_json_verdict(
    scenario: &Scenario,
    seq: &EventSeq,
    verdict: &Verdict,
    timeline: bool,
    out: &mut dyn Write,
) -> std::io::Result<()> {
    if timeline {
        for i in 0..=seq.len() {
            let (gws, depths) = timeline_row(scenario, verdict, i);
            let gws: Vec<_> = gws.into_iter().map(|(n, g, o)| json!({"gateway": n, "g": g, "owners": o})).collect();
            writeln!(out, "{}", json!({"type": "timeline", "index": i, "gateways": gws, "fdepth": depths}))?;
        }
    }
    for (i, o) in &verdict.observations {
        writeln!(out, "{}", json!({"type": "observation", "index": i, "kind": o.kind, "message": o.message}))?;
    }
    for (i, v) in &verdict.violations {
        writeln!(out, "{}", json!({"type": "violation", "index": i, "monitor": v.monitor, "message": v.message}))?;
    }
    writeln!(out, "{}", json!({"type": "verdict", "clean": verdict.is_clean(), "events": seq.len()}))
}

fn cmd_parse_check(file: &Path, out: &mut dyn Write) -> Result<u8, String> {
    let scenario = load(&Source { builtin: None, file: Some(file.to_path_buf()) })?;
    let io = |e: std::io::Error| e.to_string();
    write_address_map(&scenario, out).map_err(io)?;
    Ok(0)
}

fn write_address_map(s: &Scenario, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "scenario {}: width {}, memory {} words, {} core(s){}",
        s.name,
        s.width.bits(),
        s.memory_size,
        s.cores,
        if s.preemption { ", preemptive" } else { "" }
    )?;
    for g in &s.globals {
        let gate = if s.gateway(&g.name).is_some() { " (gateway)" } else { "" };
        writeln!(out, "global {} @{} = {}{gate}", g.name, g.addr, g.init)?;
    }
    for d in &s.devices {
        writeln!(out, "device {} budget {}", d.name, d.budget)?;
    }
    for (i, t) in s.threads.iter().enumerate() {
        let (base, limit) = s.stack_region(ThreadId(i));
        writeln!(out, "thread {}: {} instructions, stack [{base}, {limit})", t.name, t.program.instructions.len())?;
        for f in &t.program.functions {
            let locals: Vec<String> = f.locals.iter().enumerate().map(|(k, l)| format!("{l}=+{k}")).collect();
            writeln!(out, "  func {} entry {} locals [{}]", f.name, f.entry, locals.join(", "))?;
        }
    }
    Ok(())
}
