//! Trace-level predicates, quantifying over the indices of a recorded trace.
//!
//! Index `i` names the state reached after the first `i` events; index 0 is
//! the initial state. A record's `start` is the state right after its first
//! micro-event and its `end` the state right after its last.

use serde::{Deserialize, Serialize};

use super::gateway::{mutex_violations, GatewayState, GatewayViolationKind};
use super::observe::{acs_operands, current_instr, live_locals, write_effect};
use super::SpecmonError;
use crate::machine::{Address, AgentId, CoreId, Event, MachineState, ThreadId, ThreadStatus, Trace, Word};
use crate::program::{micro_kinds, ContractKind, MicroKind, Op, Reg, Scenario};

fn state<'t>(trace: &'t Trace<'_>, i: usize) -> Result<&'t MachineState, SpecmonError> {
    trace.state_at(i).ok_or(SpecmonError::IndexOutOfRange { index: i, len: trace.len() })
}

pub fn word_at(trace: &Trace<'_>, i: usize, addr: Address) -> Result<Word, SpecmonError> {
    Ok(state(trace, i)?.word(addr))
}

pub fn reg_at(trace: &Trace<'_>, i: usize, t: ThreadId, r: Reg) -> Result<Word, SpecmonError> {
    Ok(state(trace, i)?.thread(t).reg(r))
}

/// `Active(w, c, t)`: core `c`'s entry in the current table names `t`.
pub fn active_on(trace: &Trace<'_>, i: usize, core: CoreId, t: ThreadId) -> Result<bool, SpecmonError> {
    Ok(state(trace, i)?.current.get(core.0) == Some(&Some(t)))
}

/// `Active(w, t)`: the number of cores running `t` (0 or 1 on a sane machine).
pub fn active(trace: &Trace<'_>, i: usize, t: ThreadId) -> Result<usize, SpecmonError> {
    Ok(state(trace, i)?.current.iter().filter(|c| **c == Some(t)).count())
}

/// `InstructionBoundary(w, c)`: the last event of the prefix is the final
/// micro-op of an instruction run by the thread on core `c`.
pub fn boundary(trace: &Trace<'_>, i: usize, core: CoreId) -> Result<bool, SpecmonError> {
    state(trace, i)?;
    if i == 0 {
        return Ok(false);
    }
    let prev = state(trace, i - 1)?;
    let event = &trace.events()[i - 1];
    let Some(t) = event.thread() else { return Ok(false) };
    if prev.current.get(core.0) != Some(&Some(t)) {
        return Ok(false);
    }
    let Some(instr) = current_instr(trace.scenario(), prev, t) else { return Ok(false) };
    Ok(prev.thread(t).micro as usize + 1 == micro_kinds(instr.op.opcode()).len())
}

/// Memory-change check for one edge: every changed word must be the write
/// committed by the event. Returns a description of the first offence.
pub fn memory_change_violation(
    scenario: &Scenario,
    prev: &MachineState,
    event: &Event,
    next: &MachineState,
) -> Option<String> {
    let write = write_effect(scenario, prev, event, next);
    let changed = prev.memory.keys().chain(next.memory.keys()).filter(|a| prev.word(**a) != next.word(**a));
    for &addr in changed {
        let v = next.word(addr);
        if !write.is_some_and(|w| w.addr == addr && w.value == v) {
            return Some(format!(
                "word {addr} changed from {} to {v} with no agent committing that write",
                prev.word(addr)
            ));
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryChangeViolation {
    /// Index of the state where the unexplained value first appears.
    pub index: usize,
    pub message: String,
}

/// Consecutive-state diffing; sufficient for every pair `i < j` by transitivity.
pub fn check_memory_change(trace: &Trace<'_>) -> Vec<MemoryChangeViolation> {
    let states = trace.states();
    trace
        .events()
        .iter()
        .enumerate()
        .filter_map(|(i, e)| {
            memory_change_violation(trace.scenario(), &states[i], e, &states[i + 1])
                .map(|message| MemoryChangeViolation { index: i + 1, message })
        })
        .collect()
}

/// One execution of `load r, X; addi r, r, 1; store X, r`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncrementRecord {
    pub thread: ThreadId,
    pub addr: Address,
    pub start: usize,
    pub end: usize,
}

pub fn extract_increments(trace: &Trace<'_>) -> Vec<IncrementRecord> {
    let sc = trace.scenario();
    let heads: Vec<Vec<usize>> = sc.threads.iter().map(|t| t.program.increment_heads()).collect();
    let mut open: Vec<Option<(Address, usize, usize)>> = vec![None; sc.threads.len()];
    let mut out = Vec::new();
    for (i, event) in trace.events().iter().enumerate() {
        let (Some(t), Some(kind)) = (event.thread(), event.micro_kind()) else { continue };
        let prev = &trace.states()[i];
        let next = &trace.states()[i + 1];
        if matches!(next.thread(t).status, ThreadStatus::Faulted(_)) {
            open[t.0] = None;
            continue;
        }
        let pc = prev.thread(t).pc;
        match kind {
            MicroKind::Issue if heads[t.0].contains(&pc) => {
                if let Some(Op::Load { addr, .. }) = current_instr(sc, prev, t).map(|i| &i.op) {
                    if let Ok(a) = crate::machine::exec::effective_address(sc, prev.thread(t), addr) {
                        open[t.0] = Some((a, pc + 2, i + 1));
                    }
                }
            }
            MicroKind::CommitWrite => {
                if let Some((addr, end_pc, start)) = open[t.0] {
                    if end_pc == pc {
                        out.push(IncrementRecord { thread: t, addr, start, end: i + 1 });
                        open[t.0] = None;
                    }
                }
            }
            _ => {}
        }
    }
    out
}

/// `∃ q ∈ [start, end]` with `Word(end) = Word(q) + 1` modulo `2^W`.
pub fn check_increment(trace: &Trace<'_>, rec: &IncrementRecord) -> Result<bool, SpecmonError> {
    if rec.start > rec.end {
        return Err(SpecmonError::MalformedRecord(format!("increment start {} after end {}", rec.start, rec.end)));
    }
    let w = trace.scenario().width;
    let end = word_at(trace, rec.end, rec.addr)?;
    for q in rec.start..=rec.end {
        if end == w.add(word_at(trace, q, rec.addr)?, Word(1)) {
            return Ok(true);
        }
    }
    Ok(false)
}

/// One completed acs attempt.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcsRecord {
    pub thread: ThreadId,
    pub target: Address,
    pub old: Word,
    pub new: Word,
    pub start: usize,
    pub end: usize,
    /// `R`, read from the destination register at `end`.
    pub result: Word,
}

/// One record per acs-begin/acs-commit pair; attempts cut off by the end of
/// the trace (or by a fault) are omitted.
pub fn extract_acs(trace: &Trace<'_>) -> Vec<AcsRecord> {
    let sc = trace.scenario();
    let mut open: Vec<Option<(AcsRecord, Reg)>> = vec![None; sc.threads.len()];
    let mut out = Vec::new();
    for (i, event) in trace.events().iter().enumerate() {
        let (Some(t), Some(kind)) = (event.thread(), event.micro_kind()) else { continue };
        let prev = &trace.states()[i];
        let next = &trace.states()[i + 1];
        if matches!(next.thread(t).status, ThreadStatus::Faulted(_)) {
            open[t.0] = None;
            continue;
        }
        match kind {
            MicroKind::AcsBegin => {
                if let Some(ops) = acs_operands(sc, prev, t) {
                    let rec = AcsRecord {
                        thread: t,
                        target: ops.target,
                        old: ops.old,
                        new: ops.new,
                        start: i + 1,
                        end: i + 1,
                        result: Word(0),
                    };
                    open[t.0] = Some((rec, ops.rd));
                }
            }
            MicroKind::AcsCommit => {
                if let Some((mut rec, rd)) = open[t.0].take() {
                    rec.end = i + 1;
                    rec.result = next.thread(t).reg(rd);
                    out.push(rec);
                }
            }
            _ => {}
        }
    }
    out
}

/// Why an acs returned 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AcsExplanation {
    /// The target held something other than `old` at this index.
    ContentsDiffered { index: usize, value: Word },
    /// Another agent wrote the target on the event producing this index,
    /// while the contents stayed equal to `old` throughout.
    InterveningWrite { index: usize, agent: AgentId, value: Word },
}

/// The explaining index for a failed attempt, preferring a differing value.
pub fn explain_acs_failure(trace: &Trace<'_>, rec: &AcsRecord) -> Result<Option<AcsExplanation>, SpecmonError> {
    for q in rec.start..=rec.end {
        let value = word_at(trace, q, rec.target)?;
        if value != rec.old {
            return Ok(Some(AcsExplanation::ContentsDiffered { index: q, value }));
        }
    }
    Ok(intervening_write(trace, rec)?.map(|(index, agent, value)| AcsExplanation::InterveningWrite {
        index,
        agent,
        value,
    }))
}

fn intervening_write(trace: &Trace<'_>, rec: &AcsRecord) -> Result<Option<(usize, AgentId, Word)>, SpecmonError> {
    state(trace, rec.end)?;
    let me = AgentId::Thread(rec.thread);
    for q in rec.start.max(1)..=rec.end {
        let (prev, next) = (&trace.states()[q - 1], &trace.states()[q]);
        if let Some(w) = write_effect(trace.scenario(), prev, &trace.events()[q - 1], next) {
            if w.addr == rec.target && w.agent != me {
                return Ok(Some((q, w.agent, w.value)));
            }
        }
    }
    Ok(None)
}

/// The acs result contract for `rec`, judged against all `records` of the
/// same trace (used for the success-uniqueness clause).
pub fn check_acs(trace: &Trace<'_>, rec: &AcsRecord, records: &[AcsRecord]) -> Result<bool, SpecmonError> {
    if rec.start > rec.end || rec.end > trace.len() {
        return Err(SpecmonError::MalformedRecord(format!(
            "acs window [{}, {}] in trace of length {}",
            rec.start,
            rec.end,
            trace.len()
        )));
    }
    match rec.result.0 {
        1 => {
            let unique = !records.iter().any(|o| {
                o.thread != rec.thread
                    && o.target == rec.target
                    && o.result == Word(1)
                    && o.start <= rec.end
                    && rec.start <= o.end
            });
            let split = (rec.start + 1..=rec.end).any(|q| {
                (rec.start..q).all(|i| trace.states()[i].word(rec.target) == rec.old)
                    && (q..=rec.end).all(|i| trace.states()[i].word(rec.target) == rec.new)
            });
            Ok(unique && split)
        }
        0 => {
            let me = AgentId::Thread(rec.thread);
            let silent = (rec.start.max(1)..=rec.end).all(|q| {
                let (prev, next) = (&trace.states()[q - 1], &trace.states()[q]);
                !write_effect(trace.scenario(), prev, &trace.events()[q - 1], next).is_some_and(|w| w.agent == me)
            });
            Ok(silent && explain_acs_failure(trace, rec)?.is_some())
        }
        _ => Ok(false),
    }
}

/// `G` and `Owns` of one gateway at every index, plus the `(index, kind,
/// message)` of each 1 -> 0 transition.
pub fn gateway_timeline(
    trace: &Trace<'_>,
    gateway: usize,
) -> (Vec<GatewayState>, Vec<(usize, GatewayViolationKind, String)>) {
    let sc = trace.scenario();
    let gw = &sc.gateways[gateway];
    let mut cur = GatewayState::initial(gw, sc.threads.len());
    let mut states = vec![cur.clone()];
    let mut violations = Vec::new();
    for (i, event) in trace.events().iter().enumerate() {
        if let Some((kind, msg)) = cur.advance(sc, gw, &trace.states()[i], event, &trace.states()[i + 1]) {
            violations.push((i + 1, kind, msg));
        }
        states.push(cur.clone());
    }
    (states, violations)
}

/// Mutual exclusion at every index: `(index, message)` for each failure.
pub fn check_mutex(trace: &Trace<'_>) -> Vec<(usize, String)> {
    let sc = trace.scenario();
    let timelines: Vec<Vec<GatewayState>> = (0..sc.gateways.len()).map(|g| gateway_timeline(trace, g).0).collect();
    let mut out = Vec::new();
    for (i, s) in trace.states().iter().enumerate() {
        let gs: Vec<GatewayState> = timelines.iter().map(|t| t[i].clone()).collect();
        out.extend(mutex_violations(sc, s, &gs).into_iter().map(|m| (i, m)));
    }
    out
}

/// `Fdepth(w, t, f)` at every index.
pub fn fdepth_profile(trace: &Trace<'_>, t: ThreadId, func: usize) -> Vec<u32> {
    let mut depth = 0u32;
    let mut out = vec![0];
    for (i, event) in trace.events().iter().enumerate() {
        if event.thread() == Some(t) {
            let (prev, next) = (&trace.states()[i], &trace.states()[i + 1]);
            let (before, after) = (prev.thread(t).frames.len(), next.thread(t).frames.len());
            match event.micro_kind() {
                Some(MicroKind::CallEnter) if after > before && next.thread(t).frames[after - 1].func == func => {
                    depth += 1
                }
                Some(MicroKind::CallExit) if after < before && prev.thread(t).frames[before - 1].func == func => {
                    depth = depth.saturating_sub(1)
                }
                _ => {}
            }
        }
        out.push(depth);
    }
    out
}

/// A call of `func` by `thread`, matched to its return by depth.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub thread: ThreadId,
    pub func: usize,
    pub start: usize,
    /// `None` while the call is still open at the end of the trace.
    pub end: Option<usize>,
}

/// Pairs each call with the first later index whose depth is one less than
/// just after the call; no index strictly between satisfies that equation.
pub fn call_records(trace: &Trace<'_>, t: ThreadId, func: usize) -> Vec<CallRecord> {
    let profile = fdepth_profile(trace, t, func);
    let mut out = Vec::new();
    for i in 1..profile.len() {
        if profile[i] == profile[i - 1] + 1 {
            let d = profile[i];
            let end = (i + 1..profile.len()).find(|&j| profile[j] + 1 == d);
            out.push(CallRecord { thread: t, func, start: i, end });
        }
    }
    out
}

/// Outcome of the non-interference check for one contracted call.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NonInterference {
    Holds,
    PostconditionFailed {
        expected: Word,
        actual: Word,
        expected_ret: Word,
        actual_ret: Word,
    },
    /// A write into the caller's live locals by another agent; the
    /// postcondition is not asserted.
    Interfered {
        index: usize,
        agent: AgentId,
        addr: Address,
    },
    /// The call has not returned within the trace.
    Open,
}

pub fn check_noninterference(trace: &Trace<'_>, call: &CallRecord) -> Result<NonInterference, SpecmonError> {
    let sc = trace.scenario();
    let fname = &sc.program(call.thread).functions[call.func].name;
    let contract =
        sc.contract_for(fname).ok_or_else(|| SpecmonError::MalformedRecord(format!("no contract for {fname}")))?;
    let Some(end) = call.end else { return Ok(NonInterference::Open) };
    if call.start == 0 || call.start > end {
        return Err(SpecmonError::MalformedRecord(format!("call window [{}, {end}]", call.start)));
    }
    let at_start = state(trace, call.start)?;
    let at_end = state(trace, end)?;
    let me = AgentId::Thread(call.thread);
    for q in call.start + 1..=end {
        let (prev, next) = (&trace.states()[q - 1], &trace.states()[q]);
        if let Some(w) = write_effect(sc, prev, &trace.events()[q - 1], next) {
            if w.agent != me && live_locals(sc, prev, call.thread).contains(&w.addr.0) {
                return Ok(NonInterference::Interfered { index: q, agent: w.agent, addr: w.addr });
            }
        }
    }
    let ContractKind::SquareAdd { m, ptr, ret } = contract.kind;
    let ctx = at_start.thread(call.thread);
    let (m, p) = (ctx.reg(m), ctx.reg(ptr));
    let read = |s: &MachineState| if p.0 < sc.memory_size as u64 { s.word(Address(p.0 as u32)) } else { Word(0) };
    let old = read(at_start);
    let w = sc.width;
    let expected = w.add(old, w.mul(m, m));
    let actual = read(at_end);
    let actual_ret = at_end.thread(call.thread).reg(ret);
    if actual == expected && actual_ret == old {
        Ok(NonInterference::Holds)
    } else {
        Ok(NonInterference::PostconditionFailed { expected, actual, expected_ret: old, actual_ret })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{initial_state, run, EventSeq};
    use crate::program::builtin;

    fn solo_run(sc: &Scenario) -> EventSeq {
        let mut s = initial_state(sc);
        let mut seq = EventSeq::new();
        while let Some(e) = crate::machine::enabled_events(sc, &s).first().copied() {
            s = crate::machine::step(sc, &s, &e).unwrap();
            seq.push(e);
        }
        seq
    }

    #[test]
    fn out_of_range_index() {
        let sc = builtin("lost-update").unwrap();
        let trace = run(&sc, &EventSeq::new()).unwrap();
        assert_eq!(word_at(&trace, 0, Address(100)), Ok(Word(0)));
        assert_eq!(word_at(&trace, 1, Address(100)), Err(SpecmonError::IndexOutOfRange { index: 1, len: 0 }));
    }

    #[test]
    fn boundary_marks_last_micro_op() {
        let sc = builtin("lost-update").unwrap();
        let seq = solo_run(&sc);
        let trace = run(&sc, &seq).unwrap();
        // t1: load(issue, commit-read) addi(boundary) store(issue, commit-write)
        let flags: Vec<bool> = (0..=4).map(|i| boundary(&trace, i, CoreId(0)).unwrap()).collect();
        assert_eq!(flags, vec![false, false, true, true, false]);
    }

    #[test]
    fn forged_increment_fails() {
        let sc = builtin("lost-update").unwrap();
        let trace = run(&sc, &solo_run(&sc)).unwrap();
        let recs = extract_increments(&trace);
        assert_eq!(recs.len(), 2);
        assert!(recs.iter().all(|r| check_increment(&trace, r).unwrap()));
        // A record claiming the second increment happened within the first
        // one's window: x ends at 1 there, never 0 -> 2.
        let forged = IncrementRecord { end: recs[1].end, start: recs[1].end, ..recs[0].clone() };
        assert!(!check_increment(&trace, &forged).unwrap());
    }

    #[test]
    fn solo_acs_succeeds() {
        let sc = builtin("acs-race").unwrap();
        let trace = run(&sc, &solo_run(&sc)).unwrap();
        let recs = extract_acs(&trace);
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].result, Word(1));
        assert_eq!(recs[1].result, Word(0));
        for r in &recs {
            assert!(check_acs(&trace, r, &recs).unwrap());
        }
        let truncated = run(&sc, &solo_run(&sc).prefix(2)).unwrap();
        assert!(extract_acs(&truncated).is_empty());
    }
}
