use std::collections::BTreeSet;

use super::{
    Action, Address, AgentId, CoreId, Event, EventSeq, Fault, Frame, MachineError, MachineState, Reservation,
    ThreadContext, ThreadId, ThreadStatus, Trace, Word,
};
use crate::program::{micro_kinds, AddrOperand, MicroKind, Op, Scenario, Src};

/// The state reached by the empty sequence.
///
/// Threads are placed on cores in ascending id order; threads beyond the core
/// count start ready.
pub fn initial_state(scenario: &Scenario) -> MachineState {
    let mut threads: Vec<ThreadContext> = scenario.threads.iter().map(|_| ThreadContext::new(0)).collect();
    let mut current = vec![None; scenario.cores];
    for (i, slot) in current.iter_mut().enumerate().take(threads.len()) {
        *slot = Some(ThreadId(i));
        threads[i].status = ThreadStatus::Running(CoreId(i));
    }
    MachineState {
        memory: scenario.initial_memory(),
        threads,
        current,
        device_writes: vec![0; scenario.devices.len()],
        event_count: 0,
    }
}

/// Every event that may fire next, in deterministic order (agent, then action).
/// Empty iff the state is terminal.
pub fn enabled_events(scenario: &Scenario, state: &MachineState) -> Vec<Event> {
    let mut out = BTreeSet::new();

    for (i, ctx) in state.threads.iter().enumerate() {
        if let ThreadStatus::Running(_) = ctx.status {
            if let Some(kind) = next_micro(scenario, ThreadId(i), ctx) {
                out.insert(Event::micro(i, kind));
            }
        }
    }

    for (d, dev) in scenario.devices.iter().enumerate() {
        if state.device_writes[d] >= dev.budget {
            continue;
        }
        for mv in &dev.moves {
            if mv.guard.is_some_and(|g| state.word(g.addr) != g.value) {
                continue;
            }
            for v in &mv.values {
                out.insert(Event::device_write(d, mv.target.0, v.0));
            }
        }
    }

    let ready: Vec<usize> =
        state.threads.iter().enumerate().filter(|(_, c)| c.status == ThreadStatus::Ready).map(|(i, _)| i).collect();
    for (c, occupant) in state.current.iter().enumerate() {
        match occupant {
            None => {
                for &r in &ready {
                    out.insert(Event::switch(c, Some(r)));
                }
            }
            Some(_) if scenario.preemption => {
                for &r in &ready {
                    out.insert(Event::switch(c, Some(r)));
                }
                out.insert(Event::switch(c, None));
            }
            Some(_) => {}
        }
    }

    out.into_iter().collect()
}

fn next_micro(scenario: &Scenario, t: ThreadId, ctx: &ThreadContext) -> Option<MicroKind> {
    let program = scenario.program(t);
    match program.instructions.get(ctx.pc) {
        Some(instr) => micro_kinds(instr.op.opcode()).get(ctx.micro as usize).copied(),
        // Running off the end is itself a (faulting) step.
        None => Some(MicroKind::BoundaryOnly),
    }
}

/// Successor of `state` under `event`, or [`MachineError::DisabledEvent`].
pub fn step(scenario: &Scenario, state: &MachineState, event: &Event) -> Result<MachineState, MachineError> {
    if !enabled_events(scenario, state).contains(event) {
        return Err(MachineError::DisabledEvent { event: *event });
    }
    Ok(apply_unchecked(scenario, state, event))
}

/// [`step`] without the enabledness check. Callers must pass an event taken
/// from [`enabled_events`] of the same state.
pub fn apply_unchecked(scenario: &Scenario, state: &MachineState, event: &Event) -> MachineState {
    let mut next = state.clone();
    next.event_count += 1;
    match (event.agent, event.action) {
        (AgentId::Thread(t), Action::Micro(_)) => exec_thread(scenario, &mut next, t),
        (AgentId::Device(d), Action::DeviceWrite { target, value }) => {
            next.device_writes[d.0] += 1;
            commit_write(&mut next, event.agent, target, value);
        }
        (AgentId::Scheduler, Action::Switch { core, thread }) => {
            if let Some(prev) = next.current[core.0].take() {
                next.threads[prev.0].status = ThreadStatus::Ready;
            }
            if let Some(t) = thread {
                next.current[core.0] = Some(t);
                next.threads[t.0].status = ThreadStatus::Running(core);
            }
        }
        _ => unreachable!("malformed event {event:?}"),
    }
    next
}

/// Run `seq` from the initial state, keeping every intermediate state.
pub fn run<'a>(scenario: &'a Scenario, seq: &EventSeq) -> Result<Trace<'a>, MachineError> {
    let mut states = Vec::with_capacity(seq.len() + 1);
    states.push(initial_state(scenario));
    for (index, event) in seq.iter().enumerate() {
        let cur = states.last().expect("nonempty");
        let next = step(scenario, cur, event).map_err(|_| MachineError::DisabledEventAt { index, event: *event })?;
        states.push(next);
    }
    Ok(Trace::from_parts(scenario, seq.clone(), states))
}

fn commit_write(state: &mut MachineState, writer: AgentId, addr: Address, value: Word) {
    state.set_word(addr, value);
    for (i, ctx) in state.threads.iter_mut().enumerate() {
        if writer == AgentId::Thread(ThreadId(i)) {
            continue;
        }
        if let Some(res) = ctx.reservation.as_mut() {
            if res.addr == addr {
                res.valid = false;
            }
        }
    }
}

/// Effective address of a memory operand for thread `t` in `state`.
pub(crate) fn effective_address(
    scenario: &Scenario,
    ctx: &ThreadContext,
    operand: &AddrOperand,
) -> Result<Address, Fault> {
    let raw = match operand {
        AddrOperand::Global { addr, .. } | AddrOperand::Absolute(addr) => addr.0 as u64,
        AddrOperand::Local { offset, .. } => {
            let frame = ctx.frames.last().ok_or(Fault::NoActiveFrame)?;
            frame.base.0 as u64 + *offset as u64
        }
        AddrOperand::Indirect(r) => ctx.reg(*r).0,
    };
    if raw < scenario.memory_size as u64 {
        Ok(Address(raw as u32))
    } else {
        Err(Fault::AddressOutOfRange(raw))
    }
}

pub(crate) fn src_value(scenario: &Scenario, ctx: &ThreadContext, src: &Src) -> Word {
    match src {
        Src::Reg(r) => ctx.reg(*r),
        Src::Imm(v) => scenario.width.wrap_signed(*v),
    }
}

fn fault(state: &mut MachineState, t: ThreadId, f: Fault) {
    let ctx = &mut state.threads[t.0];
    ctx.status = ThreadStatus::Faulted(f);
    ctx.reservation = None;
    ctx.probe = None;
    for slot in state.current.iter_mut() {
        if *slot == Some(t) {
            *slot = None;
        }
    }
}

fn exec_thread(scenario: &Scenario, state: &mut MachineState, t: ThreadId) {
    let program = scenario.program(t);
    let width = scenario.width;
    let pc = state.threads[t.0].pc;
    let Some(instr) = program.instructions.get(pc) else {
        return fault(state, t, Fault::PcOutOfRange(pc));
    };
    let kinds = micro_kinds(instr.op.opcode());
    let micro = state.threads[t.0].micro as usize;
    let last = micro + 1 == kinds.len();

    // Default successor position; control flow below may override the pc.
    let mut next_pc = if last { pc + 1 } else { pc };
    let ctx = state.threads[t.0].clone();

    match (&instr.op, kinds[micro]) {
        (Op::Li { rd, imm }, _) => state.threads[t.0].regs[rd.index()] = width.wrap_signed(*imm),
        (Op::Mov { rd, rs }, _) => state.threads[t.0].regs[rd.index()] = ctx.reg(*rs),
        (Op::Add { rd, ra, rb }, _) => state.threads[t.0].regs[rd.index()] = width.add(ctx.reg(*ra), ctx.reg(*rb)),
        (Op::Addi { rd, ra, imm }, _) => {
            state.threads[t.0].regs[rd.index()] = width.add(ctx.reg(*ra), width.wrap_signed(*imm))
        }
        (Op::Mul { rd, ra, rb }, _) => state.threads[t.0].regs[rd.index()] = width.mul(ctx.reg(*ra), ctx.reg(*rb)),
        (Op::Load { addr, .. } | Op::Store { addr, .. } | Op::Release { addr }, MicroKind::Issue) => {
            if let Err(f) = effective_address(scenario, &ctx, addr) {
                return fault(state, t, f);
            }
        }
        (Op::Load { rd, addr }, MicroKind::CommitRead) => match effective_address(scenario, &ctx, addr) {
            Ok(a) => state.threads[t.0].regs[rd.index()] = state.word(a),
            Err(f) => return fault(state, t, f),
        },
        (Op::Store { addr, src }, MicroKind::CommitWrite) => match effective_address(scenario, &ctx, addr) {
            Ok(a) => commit_write(state, AgentId::Thread(t), a, src_value(scenario, &ctx, src)),
            Err(f) => return fault(state, t, f),
        },
        (Op::Release { addr }, MicroKind::CommitWrite) => match effective_address(scenario, &ctx, addr) {
            Ok(a) => commit_write(state, AgentId::Thread(t), a, Word(0)),
            Err(f) => return fault(state, t, f),
        },
        (Op::Acs { addr, .. }, MicroKind::AcsBegin) => match effective_address(scenario, &ctx, addr) {
            Ok(a) => state.threads[t.0].reservation = Some(Reservation { addr: a, valid: true }),
            Err(f) => return fault(state, t, f),
        },
        (Op::Acs { .. }, MicroKind::AcsProbe) => {
            let res = ctx.reservation.expect("acs-probe without reservation");
            state.threads[t.0].probe = Some(state.word(res.addr));
        }
        (Op::Acs { rd, old, new, .. }, MicroKind::AcsCommit) => {
            let res = ctx.reservation.expect("acs-commit without reservation");
            let probed = ctx.probe.expect("acs-commit without probe");
            let success = res.valid && probed == src_value(scenario, &ctx, old);
            if success {
                commit_write(state, AgentId::Thread(t), res.addr, src_value(scenario, &ctx, new));
            }
            let th = &mut state.threads[t.0];
            th.regs[rd.index()] = Word(success as u64);
            th.reservation = None;
            th.probe = None;
        }
        (Op::Beqz { rs, target, .. }, _) => {
            if ctx.reg(*rs).0 == 0 {
                next_pc = *target;
            }
        }
        (Op::Bnez { rs, target, .. }, _) => {
            if ctx.reg(*rs).0 != 0 {
                next_pc = *target;
            }
        }
        (Op::Jmp { target, .. }, _) => next_pc = *target,
        (Op::Call { func, .. }, MicroKind::CallEnter) => {
            let (stack_base, stack_limit) = scenario.stack_region(t);
            let base = match ctx.frames.last() {
                Some(top) => {
                    let size = program.functions[top.func].locals.len() as u32;
                    Address(top.base.0 + size)
                }
                None => stack_base,
            };
            let size = program.functions[*func].locals.len() as u32;
            if base.0 + size > stack_limit.0 {
                return fault(state, t, Fault::StackOverflow);
            }
            state.threads[t.0].frames.push(Frame { func: *func, ret: pc + 1, base });
            next_pc = program.functions[*func].entry;
        }
        (Op::Ret, MicroKind::CallExit) => match state.threads[t.0].frames.pop() {
            Some(frame) => next_pc = frame.ret,
            None => return fault(state, t, Fault::ReturnWithoutCall),
        },
        (Op::Halt, _) => {
            let core = state.core_of(t);
            let th = &mut state.threads[t.0];
            th.status = ThreadStatus::Halted;
            th.micro = 0;
            if let Some(c) = core {
                state.current[c.0] = None;
            }
            return;
        }
        (Op::Nop, _) => {}
        (op, kind) => unreachable!("micro-op {kind:?} does not belong to {op:?}"),
    }

    let th = &mut state.threads[t.0];
    if last {
        th.pc = next_pc;
        th.micro = 0;
    } else {
        th.micro += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::{builtin, parse};

    fn two_thread(src_body: &str, preempt: bool, cores: usize) -> Scenario {
        let mut text = String::new();
        if preempt {
            text.push_str("preempt\n");
        }
        text.push_str(&format!("cores {cores}\nglobal x = 0 @100\n"));
        text.push_str(&format!("thread a:\n{src_body}\nthread b:\n{src_body}\n"));
        parse(&text).unwrap()
    }

    #[test]
    fn initial_image_and_cores() {
        let s = parse("global x = 5 @100\nthread t0:\n halt\nthread t1:\n halt\n").unwrap();
        let st = initial_state(&s);
        assert_eq!(st.word(Address(100)), Word(5));
        assert_eq!(st.word(Address(7)), Word(0));
        assert_eq!(st.current, vec![Some(ThreadId(0)), Some(ThreadId(1))]);
    }

    #[test]
    fn terminal_state_has_no_events() {
        let s = parse("thread t0:\n halt\n").unwrap();
        let st = initial_state(&s);
        let st = step(&s, &st, &Event::micro(0, MicroKind::BoundaryOnly)).unwrap();
        assert!(enabled_events(&s, &st).is_empty());
    }

    #[test]
    fn two_running_threads_two_events() {
        let s = two_thread(" nop\n halt", false, 2);
        let ev = enabled_events(&s, &initial_state(&s));
        assert_eq!(ev, vec![Event::micro(0, MicroKind::BoundaryOnly), Event::micro(1, MicroKind::BoundaryOnly)]);
    }

    #[test]
    fn preemption_one_core_matches_hand_model() {
        // Hand model: core 0 runs a, b is ready. Thread a may step; the
        // scheduler may swap b in, or park a leaving the core idle.
        let s = two_thread(" nop\n halt", true, 1);
        let ev = enabled_events(&s, &initial_state(&s));
        assert_eq!(
            ev,
            vec![Event::micro(0, MicroKind::BoundaryOnly), Event::switch(0, None), Event::switch(0, Some(1))]
        );
        // After parking: core idle, both ready -> two dispatch choices only.
        let parked = step(&s, &initial_state(&s), &Event::switch(0, None)).unwrap();
        assert_eq!(enabled_events(&s, &parked), vec![Event::switch(0, Some(0)), Event::switch(0, Some(1))]);
    }

    #[test]
    fn no_preemption_dispatches_after_halt() {
        let s = two_thread(" halt", false, 1);
        let st = initial_state(&s);
        assert_eq!(enabled_events(&s, &st), vec![Event::micro(0, MicroKind::BoundaryOnly)]);
        let st = step(&s, &st, &Event::micro(0, MicroKind::BoundaryOnly)).unwrap();
        assert_eq!(enabled_events(&s, &st), vec![Event::switch(0, Some(1))]);
    }

    #[test]
    fn device_write_changes_memory() {
        let s = parse("global a = 0 @10\ndevice d writes 7 to a budget 1\nthread t:\n halt\n").unwrap();
        let st = initial_state(&s);
        let st = step(&s, &st, &Event::device_write(0, 10, 7)).unwrap();
        assert_eq!(st.word(Address(10)), Word(7));
        assert!(!enabled_events(&s, &st).contains(&Event::device_write(0, 10, 7)));
    }

    #[test]
    fn store_commits_only_at_last_micro() {
        let s = parse("global x = 0 @100\nthread t:\n li r1, 9\n store x, r1\n halt\n").unwrap();
        let mut st = initial_state(&s);
        st = step(&s, &st, &Event::micro(0, MicroKind::BoundaryOnly)).unwrap();
        st = step(&s, &st, &Event::micro(0, MicroKind::Issue)).unwrap();
        assert_eq!(st.word(Address(100)), Word(0));
        st = step(&s, &st, &Event::micro(0, MicroKind::CommitWrite)).unwrap();
        assert_eq!(st.word(Address(100)), Word(9));
    }

    #[test]
    fn addi_wraps_at_width() {
        let s = parse("thread t:\n li r1, -1\n addi r1, r1, 1\n halt\n").unwrap();
        let mut st = initial_state(&s);
        st = step(&s, &st, &Event::micro(0, MicroKind::BoundaryOnly)).unwrap();
        assert_eq!(st.threads[0].regs[1], Word(0xffff_ffff));
        st = step(&s, &st, &Event::micro(0, MicroKind::BoundaryOnly)).unwrap();
        assert_eq!(st.threads[0].regs[1], Word(0));
    }

    #[test]
    fn disabled_event_rejected() {
        let s = builtin("lost-update").unwrap();
        let st = initial_state(&s);
        let err = step(&s, &st, &Event::micro(0, MicroKind::CommitWrite)).unwrap_err();
        assert!(matches!(err, MachineError::DisabledEvent { .. }));
        let seq = EventSeq::from(vec![Event::micro(0, MicroKind::Issue), Event::micro(0, MicroKind::Issue)]);
        assert_eq!(
            run(&s, &seq).unwrap_err(),
            MachineError::DisabledEventAt { index: 1, event: Event::micro(0, MicroKind::Issue) }
        );
    }

    #[test]
    fn benign_write_invalidates_reservation() {
        let s = builtin("benign-release").unwrap();
        let seq: EventSeq = vec![
            Event::micro(0, MicroKind::AcsBegin),
            Event::micro(1, MicroKind::Issue),
            Event::micro(1, MicroKind::CommitWrite),
            Event::micro(0, MicroKind::AcsProbe),
            Event::micro(0, MicroKind::AcsCommit),
        ]
        .into();
        let tr = run(&s, &seq).unwrap();
        let gate = s.global("gate").unwrap().addr;
        assert!(tr.states().iter().all(|st| st.word(gate) == Word(0)));
        assert_eq!(tr.final_state().threads[0].regs[0], Word(0));
    }
}
