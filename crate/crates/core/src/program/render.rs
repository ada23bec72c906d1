use std::fmt::Write;

use super::{Activation, AddrOperand, ContractKind, Op, Program, Scenario, Src};
use crate::program::{DEFAULT_MAX_EVENTS, DEFAULT_MAX_STATES, DEFAULT_MEMORY_WORDS};

/// Print a scenario back to source text. `parse(render(s))` yields a
/// scenario equal to `s` up to source line numbers.
pub fn render(s: &Scenario) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario {}", s.name);
    let _ = writeln!(out, "width {}", s.width.bits());
    if s.memory_size != DEFAULT_MEMORY_WORDS {
        let _ = writeln!(out, "memory {}", s.memory_size);
    }
    let _ = writeln!(out, "cores {}", s.cores);
    if s.preemption {
        out.push_str("preempt\n");
    }
    if s.max_events != DEFAULT_MAX_EVENTS {
        let _ = writeln!(out, "max-events {}", s.max_events);
    }
    if s.max_states != DEFAULT_MAX_STATES {
        let _ = writeln!(out, "max-states {}", s.max_states);
    }
    for g in &s.globals {
        let _ = writeln!(out, "global {} = {} @{}", g.name, g.init, g.addr);
    }
    for g in &s.gateways {
        let active = match g.activation {
            Activation::AtStart => " active",
            Activation::Never => "",
        };
        let _ = writeln!(out, "gateway {} @{}{}", g.name, g.addr, active);
    }
    for d in &s.devices {
        for mv in &d.moves {
            let values: Vec<String> = mv.values.iter().map(|v| v.to_string()).collect();
            let _ = write!(out, "device {} writes {} to {} budget {}", d.name, values.join(", "), mv.target, d.budget);
            if let Some(g) = mv.guard {
                let _ = write!(out, " when {} == {}", g.addr, g.value);
            }
            out.push('\n');
        }
    }
    for c in &s.contracts {
        match c.kind {
            ContractKind::SquareAdd { m, ptr, ret } => {
                let _ = writeln!(out, "contract {} square-add {m} {ptr} {ret}", c.func);
            }
        }
    }
    for t in &s.threads {
        let _ = writeln!(out, "thread {}:", t.name);
        render_program(&mut out, &t.program);
    }
    out
}

fn render_program(out: &mut String, p: &Program) {
    let mut open: Option<&Option<String>> = None;
    for (i, instr) in p.instructions.iter().enumerate() {
        let guard = p.critical.get(&i);
        let func_starts = p.functions.iter().find(|f| f.entry == i);
        if open.is_some() && (guard != open || func_starts.is_some()) {
            out.push_str("  }\n");
            open = None;
        }
        if let Some(f) = func_starts {
            let _ = write!(out, "func {}", f.name);
            if !f.locals.is_empty() {
                let _ = write!(out, " local {}", f.locals.join(", "));
            }
            out.push_str(":\n");
        }
        if open.is_none() {
            if let Some(g) = guard {
                match g {
                    Some(name) => {
                        let _ = writeln!(out, "  critical {name} {{");
                    }
                    None => out.push_str("  critical {\n"),
                }
                open = Some(g);
            }
        }
        for (label, _) in p.labels.iter().filter(|(_, &at)| at == i) {
            let _ = writeln!(out, "{label}:");
        }
        let _ = writeln!(out, "    {}", render_op(&instr.op));
    }
    if open.is_some() {
        out.push_str("  }\n");
    }
    for (label, _) in p.labels.iter().filter(|(_, &at)| at == p.instructions.len()) {
        let _ = writeln!(out, "{label}:");
    }
}

fn addr(a: &AddrOperand) -> String {
    match a {
        AddrOperand::Global { name, .. } | AddrOperand::Local { name, .. } => name.clone(),
        AddrOperand::Absolute(a) => a.to_string(),
        AddrOperand::Indirect(r) => format!("[{r}]"),
    }
}

fn src(s: &Src) -> String {
    match s {
        Src::Reg(r) => r.to_string(),
        Src::Imm(v) => v.to_string(),
    }
}

pub(crate) fn render_op(op: &Op) -> String {
    let name = op.opcode().name();
    match op {
        Op::Li { rd, imm } => format!("{name} {rd}, {imm}"),
        Op::Mov { rd, rs } => format!("{name} {rd}, {rs}"),
        Op::Load { rd, addr: a } => format!("{name} {rd}, {}", addr(a)),
        Op::Store { addr: a, src: s } => format!("{name} {}, {}", addr(a), src(s)),
        Op::Add { rd, ra, rb } | Op::Mul { rd, ra, rb } => format!("{name} {rd}, {ra}, {rb}"),
        Op::Addi { rd, ra, imm } => format!("{name} {rd}, {ra}, {imm}"),
        Op::Acs { rd, addr: a, old, new } => format!("{name} {rd}, {}, {}, {}", addr(a), src(old), src(new)),
        Op::Beqz { rs, label, .. } | Op::Bnez { rs, label, .. } => format!("{name} {rs}, {label}"),
        Op::Jmp { label, .. } => format!("{name} {label}"),
        Op::Call { name: f, .. } => format!("{name} {f}"),
        Op::Ret | Op::Halt | Op::Nop => name.to_string(),
        Op::Release { addr: a } => format!("{name} {}", addr(a)),
    }
}
