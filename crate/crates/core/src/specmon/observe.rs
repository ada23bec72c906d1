//! What an event did, read off the instruction and the states around it.

use std::ops::Range;

use crate::machine::exec::{effective_address, src_value};
use crate::machine::{Action, Address, AgentId, Event, MachineState, ThreadId, ThreadStatus, Word};
use crate::program::{Instruction, MicroKind, Op, Reg, Scenario};

/// A committed write of `value` to `addr`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WriteEffect {
    pub agent: AgentId,
    pub addr: Address,
    pub value: Word,
    /// The write is the commit of a successful acs.
    pub via_acs: bool,
}

/// Instruction thread `t` is positioned at in `state`.
pub fn current_instr<'s>(scenario: &'s Scenario, state: &MachineState, t: ThreadId) -> Option<&'s Instruction> {
    scenario.program(t).instructions.get(state.thread(t).pc)
}

/// The write committed by `event` on the edge `prev -> next`, if any.
///
/// Derived from the event's instruction semantics, not from diffing memory,
/// so a step that changes memory without a write is detectable.
pub fn write_effect(
    scenario: &Scenario,
    prev: &MachineState,
    event: &Event,
    next: &MachineState,
) -> Option<WriteEffect> {
    match (event.agent, event.action) {
        (AgentId::Device(_), Action::DeviceWrite { target, value }) => {
            Some(WriteEffect { agent: event.agent, addr: target, value, via_acs: false })
        }
        (AgentId::Thread(t), Action::Micro(kind)) => {
            // A faulting micro-op writes nothing.
            if matches!(next.thread(t).status, ThreadStatus::Faulted(_)) {
                return None;
            }
            let ctx = prev.thread(t);
            let op = &current_instr(scenario, prev, t)?.op;
            match (op, kind) {
                (Op::Store { addr, src }, MicroKind::CommitWrite) => Some(WriteEffect {
                    agent: event.agent,
                    addr: effective_address(scenario, ctx, addr).ok()?,
                    value: src_value(scenario, ctx, src),
                    via_acs: false,
                }),
                (Op::Release { addr }, MicroKind::CommitWrite) => Some(WriteEffect {
                    agent: event.agent,
                    addr: effective_address(scenario, ctx, addr).ok()?,
                    value: Word(0),
                    via_acs: false,
                }),
                (Op::Acs { rd, addr, new, .. }, MicroKind::AcsCommit) => {
                    (next.thread(t).reg(*rd) == Word(1)).then(|| WriteEffect {
                        agent: event.agent,
                        addr: ctx
                            .reservation
                            .map(|r| r.addr)
                            .or_else(|| effective_address(scenario, ctx, addr).ok())
                            .expect("acs in flight has a target"),
                        value: src_value(scenario, ctx, new),
                        via_acs: true,
                    })
                }
                _ => None,
            }
        }
        _ => None,
    }
}

/// Operands of the acs instruction thread `t` is positioned at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AcsOperands {
    pub rd: Reg,
    pub target: Address,
    pub old: Word,
    pub new: Word,
}

pub fn acs_operands(scenario: &Scenario, state: &MachineState, t: ThreadId) -> Option<AcsOperands> {
    let ctx = state.thread(t);
    match &current_instr(scenario, state, t)?.op {
        Op::Acs { rd, addr, old, new } => Some(AcsOperands {
            rd: *rd,
            target: effective_address(scenario, ctx, addr).ok()?,
            old: src_value(scenario, ctx, old),
            new: src_value(scenario, ctx, new),
        }),
        _ => None,
    }
}

/// Addresses of every live local of thread `t`: from its stack base up to
/// the end of the innermost frame.
pub fn live_locals(scenario: &Scenario, state: &MachineState, t: ThreadId) -> Range<u32> {
    let (base, _) = scenario.stack_region(t);
    let ctx = state.thread(t);
    let end = match ctx.frames.last() {
        Some(top) => top.base.0 + scenario.program(t).functions[top.func].locals.len() as u32,
        None => base.0,
    };
    base.0..end
}
