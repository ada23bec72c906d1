//! Incremental monitors, folded edge by edge by the explorer and by replay.

use std::collections::BTreeSet;
use std::hash::{Hash, Hasher};

use fnv::FnvHasher;

use super::gateway::{mutex_violations, GatewayState};
use super::observe::{acs_operands, current_instr, live_locals, write_effect};
use super::predicates::memory_change_violation;
use super::{MonitorKind, MonitorSet, Observation, Violation, OBS_ACS_BENIGN_FAILURE, OBS_CALL_INTERFERED};
use crate::machine::{Address, AgentId, Event, MachineState, ThreadId, ThreadStatus, Word};
use crate::program::{ContractKind, MicroKind, Op, Reg, Scenario};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Findings {
    pub violations: Vec<Violation>,
    pub observations: Vec<Observation>,
}

impl Findings {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty() && self.observations.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum AcsPhase {
    Old,
    New,
    Broken,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct AcsInFlight {
    target: Address,
    old: Word,
    new: Word,
    rd: Reg,
    phase: AcsPhase,
    saw_other_value: bool,
    other_write: bool,
    own_write: bool,
    overlapped_success: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct IncrementInFlight {
    addr: Address,
    end_pc: usize,
    seen: BTreeSet<Word>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct OpenCall {
    func: usize,
    depth: usize,
    contract: ContractKind,
    m: Word,
    ptr: Word,
    old: Word,
    interfered: bool,
}

/// Monitor state carried along one path. Contains no trace indices, so it is
/// a function of what happened, not of when.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SuiteState {
    gateways: Vec<GatewayState>,
    acs: Vec<Option<AcsInFlight>>,
    increments: Vec<Option<IncrementInFlight>>,
    fdepth: Vec<Vec<u32>>,
    calls: Vec<Vec<OpenCall>>,
}

impl SuiteState {
    pub fn gateways(&self) -> &[GatewayState] {
        &self.gateways
    }

    /// `Fdepth` of every (thread, function) pair, indexed `[thread][function]`.
    pub fn fdepth(&self) -> &[Vec<u32>] {
        &self.fdepth
    }

    /// Digest folded into the explorer's visited-state key.
    pub fn digest(&self) -> u64 {
        let mut h = FnvHasher::default();
        self.hash(&mut h);
        h.finish()
    }
}

/// The monitor suite for one scenario.
pub struct Suite<'s> {
    scenario: &'s Scenario,
    set: MonitorSet,
    heads: Vec<BTreeSet<usize>>,
}

impl<'s> Suite<'s> {
    pub fn new(scenario: &'s Scenario, set: &MonitorSet) -> Self {
        let heads = scenario.threads.iter().map(|t| t.program.increment_heads().into_iter().collect()).collect();
        Suite { scenario, set: set.clone(), heads }
    }

    pub fn monitors(&self) -> &MonitorSet {
        &self.set
    }

    /// Monitor state at the empty sequence, plus findings on the initial state.
    pub fn start(&self, s0: &MachineState) -> (SuiteState, Findings) {
        let sc = self.scenario;
        let n = sc.threads.len();
        let st = SuiteState {
            gateways: sc.gateways.iter().map(|g| GatewayState::initial(g, n)).collect(),
            acs: vec![None; n],
            increments: vec![None; n],
            fdepth: sc.threads.iter().map(|t| vec![0; t.program.functions.len()]).collect(),
            calls: vec![Vec::new(); n],
        };
        let mut f = Findings::default();
        self.state_checks(&st, s0, &mut f);
        (st, f)
    }

    fn report(&self, f: &mut Findings, monitor: MonitorKind, message: String) {
        if self.set.contains(monitor) {
            f.violations.push(Violation { monitor, message });
        }
    }

    fn observe(&self, f: &mut Findings, monitor: MonitorKind, kind: &str, message: String) {
        if self.set.contains(monitor) {
            f.observations.push(Observation { kind: kind.to_string(), message });
        }
    }

    fn thread_name(&self, t: ThreadId) -> &str {
        &self.scenario.threads[t.0].name
    }

    /// Fold one edge `prev --event--> next`.
    pub fn advance(&self, st: &mut SuiteState, prev: &MachineState, event: &Event, next: &MachineState) -> Findings {
        let sc = self.scenario;
        let mut f = Findings::default();
        let write = write_effect(sc, prev, event, next);

        if let Some(msg) = memory_change_violation(sc, prev, event, next) {
            self.report(&mut f, MonitorKind::MemoryChange, msg);
        }

        if let Some(t) = event.thread() {
            if let ThreadStatus::Faulted(fault) = next.thread(t).status {
                self.report(&mut f, MonitorKind::Fault, format!("thread {} faulted: {fault}", self.thread_name(t)));
            }
        }

        for (k, gw) in sc.gateways.iter().enumerate() {
            if let Some((kind, msg)) = st.gateways[k].advance(sc, gw, prev, event, next) {
                self.report(&mut f, MonitorKind::Gateway, format!("{}: {msg}", kind.name()));
            }
        }

        self.advance_acs(st, prev, event, next, write.map(|w| (w.agent, w.addr)), &mut f);
        self.advance_increment(st, prev, event, next, &mut f);
        self.advance_calls(st, prev, event, next, write.map(|w| (w.agent, w.addr)), &mut f);

        self.state_checks(st, next, &mut f);
        f
    }

    fn state_checks(&self, st: &SuiteState, state: &MachineState, f: &mut Findings) {
        let sc = self.scenario;
        for msg in mutex_violations(sc, state, &st.gateways) {
            self.report(f, MonitorKind::Mutex, msg);
        }
        for (i, ctx) in state.threads.iter().enumerate() {
            let t = ThreadId(i);
            let cores = state.current.iter().filter(|c| **c == Some(t)).count();
            if cores > 1 {
                self.report(f, MonitorKind::Active, format!("thread {} active on {cores} cores", self.thread_name(t)));
            }
            let consistent = match ctx.status {
                ThreadStatus::Running(c) => state.current.get(c.0) == Some(&Some(t)),
                _ => cores == 0,
            };
            if !consistent {
                self.report(
                    f,
                    MonitorKind::Active,
                    format!("thread {} status disagrees with the core table", self.thread_name(t)),
                );
            }
        }
    }

    fn advance_acs(
        &self,
        st: &mut SuiteState,
        prev: &MachineState,
        event: &Event,
        next: &MachineState,
        write: Option<(AgentId, Address)>,
        f: &mut Findings,
    ) {
        let sc = self.scenario;
        for (i, slot) in st.acs.iter_mut().enumerate() {
            let Some(rec) = slot.as_mut() else { continue };
            let me = AgentId::Thread(ThreadId(i));
            if let Some((agent, addr)) = write {
                if agent == me {
                    rec.own_write = true;
                } else if addr == rec.target {
                    rec.other_write = true;
                }
            }
            let v = next.word(rec.target);
            rec.saw_other_value |= v != rec.old;
            rec.phase = match rec.phase {
                AcsPhase::Old if v == rec.old => AcsPhase::Old,
                AcsPhase::Old | AcsPhase::New if v == rec.new => AcsPhase::New,
                _ => AcsPhase::Broken,
            };
        }

        let (Some(t), Some(kind)) = (event.thread(), event.micro_kind()) else { return };
        match kind {
            MicroKind::AcsBegin => {
                if let Some(ops) = acs_operands(sc, prev, t) {
                    let v = next.word(ops.target);
                    st.acs[t.0] = Some(AcsInFlight {
                        target: ops.target,
                        old: ops.old,
                        new: ops.new,
                        rd: ops.rd,
                        phase: if v == ops.old { AcsPhase::Old } else { AcsPhase::Broken },
                        saw_other_value: v != ops.old,
                        other_write: false,
                        own_write: false,
                        overlapped_success: false,
                    });
                }
            }
            MicroKind::AcsCommit => {
                let Some(rec) = st.acs[t.0].take() else { return };
                let name = self.thread_name(t).to_string();
                match next.thread(t).reg(rec.rd).0 {
                    1 => {
                        if rec.overlapped_success {
                            self.report(
                                f,
                                MonitorKind::Acs,
                                format!(
                                    "acs by {name} on {} succeeded while an overlapping acs also succeeded",
                                    rec.target
                                ),
                            );
                        }
                        let split_ok = match rec.phase {
                            AcsPhase::New => true,
                            AcsPhase::Old => rec.old == rec.new,
                            AcsPhase::Broken => false,
                        };
                        if !split_ok {
                            self.report(
                                f,
                                MonitorKind::Acs,
                                format!(
                                    "acs by {name} on {} succeeded but contents did not go {} -> {}",
                                    rec.target, rec.old, rec.new
                                ),
                            );
                        }
                        for (j, other) in st.acs.iter_mut().enumerate() {
                            if let Some(o) = other.as_mut() {
                                if j != t.0 && o.target == rec.target {
                                    o.overlapped_success = true;
                                }
                            }
                        }
                    }
                    0 => {
                        if rec.own_write {
                            self.report(
                                f,
                                MonitorKind::Acs,
                                format!("failed acs by {name} on {} wrote memory", rec.target),
                            );
                        }
                        if !rec.saw_other_value && !rec.other_write {
                            self.report(
                                f,
                                MonitorKind::Acs,
                                format!("acs by {name} on {} failed with no explaining value or write", rec.target),
                            );
                        } else if !rec.saw_other_value {
                            self.observe(
                                f,
                                MonitorKind::Acs,
                                OBS_ACS_BENIGN_FAILURE,
                                format!(
                                    "acs by {name} on {} failed although it held {} throughout",
                                    rec.target, rec.old
                                ),
                            );
                        }
                    }
                    r => self.report(f, MonitorKind::Acs, format!("acs by {name} returned {r}")),
                }
            }
            _ => {}
        }
    }

    fn advance_increment(
        &self,
        st: &mut SuiteState,
        prev: &MachineState,
        event: &Event,
        next: &MachineState,
        f: &mut Findings,
    ) {
        let sc = self.scenario;
        for (i, slot) in st.increments.iter_mut().enumerate() {
            if next.threads[i].status.is_finished() {
                *slot = None;
            }
            if let Some(rec) = slot.as_mut() {
                rec.seen.insert(next.word(rec.addr));
            }
        }
        let (Some(t), Some(kind)) = (event.thread(), event.micro_kind()) else { return };
        let pc = prev.thread(t).pc;
        match kind {
            MicroKind::Issue if self.heads[t.0].contains(&pc) && prev.thread(t).micro == 0 => {
                if let Some(Op::Load { addr, .. }) = current_instr(sc, prev, t).map(|i| &i.op) {
                    if let Ok(a) = crate::machine::exec::effective_address(sc, prev.thread(t), addr) {
                        st.increments[t.0] = Some(IncrementInFlight {
                            addr: a,
                            end_pc: pc + 2,
                            seen: [next.word(a)].into_iter().collect(),
                        });
                    }
                }
            }
            MicroKind::CommitWrite => {
                let end = st.increments[t.0].as_ref().is_some_and(|r| r.end_pc == prev.thread(t).pc);
                if end {
                    let rec = st.increments[t.0].take().expect("checked");
                    let v_end = next.word(rec.addr);
                    let before = sc.width.sub(v_end, Word(1));
                    if !rec.seen.contains(&before) {
                        self.report(
                            f,
                            MonitorKind::Increment,
                            format!(
                                "increment of {} by {} ended at {v_end} but {} never held {before} during it",
                                rec.addr,
                                self.thread_name(t),
                                rec.addr
                            ),
                        );
                    }
                }
            }
            _ => {}
        }
    }

    fn advance_calls(
        &self,
        st: &mut SuiteState,
        prev: &MachineState,
        event: &Event,
        next: &MachineState,
        write: Option<(AgentId, Address)>,
        f: &mut Findings,
    ) {
        let sc = self.scenario;

        if let Some((agent, addr)) = write {
            for (i, open) in st.calls.iter_mut().enumerate() {
                let t = ThreadId(i);
                if open.is_empty() || agent == AgentId::Thread(t) {
                    continue;
                }
                if live_locals(sc, prev, t).contains(&addr.0) {
                    open.iter_mut().for_each(|c| c.interfered = true);
                }
            }
        }

        let (Some(t), Some(kind)) = (event.thread(), event.micro_kind()) else { return };
        let program = sc.program(t);
        match kind {
            MicroKind::CallEnter => {
                let Some(Op::Call { func, .. }) = current_instr(sc, prev, t).map(|i| &i.op) else { return };
                if next.thread(t).frames.len() == prev.thread(t).frames.len() {
                    return; // faulted on entry
                }
                st.fdepth[t.0][*func] += 1;
                if let Some(c) = sc.contract_for(&program.functions[*func].name) {
                    let ContractKind::SquareAdd { m, ptr, .. } = c.kind;
                    let ctx = next.thread(t);
                    let p = ctx.reg(ptr);
                    let old = if p.0 < sc.memory_size as u64 { next.word(Address(p.0 as u32)) } else { Word(0) };
                    st.calls[t.0].push(OpenCall {
                        func: *func,
                        depth: ctx.frames.len(),
                        contract: c.kind,
                        m: ctx.reg(m),
                        ptr: p,
                        old,
                        interfered: false,
                    });
                }
            }
            MicroKind::CallExit => {
                let Some(frame) = prev.thread(t).frames.last() else { return };
                let depth = &mut st.fdepth[t.0][frame.func];
                if *depth == 0 {
                    self.report(
                        f,
                        MonitorKind::Fdepth,
                        format!(
                            "thread {} returned from {} with depth 0",
                            self.thread_name(t),
                            program.functions[frame.func].name
                        ),
                    );
                } else {
                    *depth -= 1;
                }
                let matches = st.calls[t.0].last().is_some_and(|c| c.depth == prev.thread(t).frames.len());
                if !matches {
                    return;
                }
                let call = st.calls[t.0].pop().expect("checked");
                let fname = &program.functions[call.func].name;
                let tname = self.thread_name(t);
                if call.interfered {
                    self.observe(
                        f,
                        MonitorKind::Noninterference,
                        OBS_CALL_INTERFERED,
                        format!("call to {fname} by {tname} interfered; postcondition not asserted"),
                    );
                    return;
                }
                let ContractKind::SquareAdd { ret, .. } = call.contract;
                let w = sc.width;
                let expected = w.add(call.old, w.mul(call.m, call.m));
                let actual =
                    if call.ptr.0 < sc.memory_size as u64 { next.word(Address(call.ptr.0 as u32)) } else { Word(0) };
                let returned = next.thread(t).reg(ret);
                if actual != expected || returned != call.old {
                    self.report(
                        f,
                        MonitorKind::Noninterference,
                        format!(
                            "{fname} by {tname} with m={} on *{}={}: left {actual} (expected {expected}), returned {returned} (expected {})",
                            call.m, call.ptr, call.old, call.old
                        ),
                    );
                }
            }
            _ => {}
        }
    }
}
