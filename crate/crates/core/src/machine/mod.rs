//! Machine state and the deterministic single-step transition.
//!
//! A [`MachineState`] is never mutated in place by callers: [`step`] consumes
//! one [`Event`] and returns the successor, and [`run`] folds a whole
//! [`EventSeq`] from [`initial_state`]. Identical inputs always produce
//! identical states, which is what makes counterexamples replayable.

pub(crate) mod exec;
mod trace;

pub use exec::{apply_unchecked, enabled_events, initial_state, run, step};
pub use trace::{EventSeq, Trace};

use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::program::{MicroKind, Reg};

/// A machine word, always reduced modulo `2^W` for the scenario's width.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Word(pub u64);

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Word width in bits, `1..=64`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WordWidth(u8);

impl Default for WordWidth {
    fn default() -> Self {
        WordWidth(32)
    }
}

impl WordWidth {
    pub fn new(bits: u32) -> Option<Self> {
        (1..=64).contains(&bits).then_some(WordWidth(bits as u8))
    }

    pub fn bits(self) -> u32 {
        self.0 as u32
    }

    pub fn mask(self) -> u64 {
        if self.0 == 64 {
            u64::MAX
        } else {
            (1u64 << self.0) - 1
        }
    }

    /// Largest representable word, `2^W - 1`.
    pub fn max(self) -> Word {
        Word(self.mask())
    }

    pub fn wrap(self, raw: u64) -> Word {
        Word(raw & self.mask())
    }

    /// Two's-complement reduction, so `-1` becomes `2^W - 1`.
    pub fn wrap_signed(self, raw: i64) -> Word {
        self.wrap(raw as u64)
    }

    pub fn add(self, a: Word, b: Word) -> Word {
        self.wrap(a.0.wrapping_add(b.0))
    }

    pub fn mul(self, a: Word, b: Word) -> Word {
        self.wrap(a.0.wrapping_mul(b.0))
    }

    pub fn sub(self, a: Word, b: Word) -> Word {
        self.wrap(a.0.wrapping_sub(b.0))
    }
}

/// Word-granular memory address.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(pub u32);

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThreadId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoreId(pub usize);

/// Who performs an event. The derived order (threads, then devices, then
/// the scheduler) is the exploration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentId {
    Thread(ThreadId),
    Device(DeviceId),
    Scheduler,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    /// The thread's next micro-op. The kind is redundant with the thread's
    /// position but makes sequences self-describing and lets [`step`] reject
    /// stale or corrupt events.
    Micro(MicroKind),
    DeviceWrite {
        target: Address,
        value: Word,
    },
    /// Put `thread` on `core`, or leave the core idle. Whoever was there
    /// goes back to ready.
    Switch {
        core: CoreId,
        thread: Option<ThreadId>,
    },
}

/// One atomic micro-step by one agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Event {
    pub agent: AgentId,
    pub action: Action,
}

impl Event {
    pub fn micro(thread: usize, kind: MicroKind) -> Self {
        Event { agent: AgentId::Thread(ThreadId(thread)), action: Action::Micro(kind) }
    }

    pub fn device_write(device: usize, target: u32, value: u64) -> Self {
        Event {
            agent: AgentId::Device(DeviceId(device)),
            action: Action::DeviceWrite { target: Address(target), value: Word(value) },
        }
    }

    pub fn switch(core: usize, thread: Option<usize>) -> Self {
        Event { agent: AgentId::Scheduler, action: Action::Switch { core: CoreId(core), thread: thread.map(ThreadId) } }
    }

    pub fn thread(&self) -> Option<ThreadId> {
        match self.agent {
            AgentId::Thread(t) => Some(t),
            _ => None,
        }
    }

    pub fn micro_kind(&self) -> Option<MicroKind> {
        match self.action {
            Action::Micro(k) => Some(k),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Frame {
    /// Index into the thread program's function table.
    pub func: usize,
    pub ret: usize,
    pub base: Address,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Reservation {
    pub addr: Address,
    pub valid: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Fault {
    AddressOutOfRange(u64),
    NoActiveFrame,
    StackOverflow,
    ReturnWithoutCall,
    PcOutOfRange(usize),
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fault::AddressOutOfRange(a) => write!(f, "address {a} out of range"),
            Fault::NoActiveFrame => f.write_str("local variable accessed outside any call"),
            Fault::StackOverflow => f.write_str("stack overflow"),
            Fault::ReturnWithoutCall => f.write_str("ret without matching call"),
            Fault::PcOutOfRange(pc) => write!(f, "pc {pc} ran off the end of the program"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ThreadStatus {
    Ready,
    Running(CoreId),
    Halted,
    Faulted(Fault),
}

impl ThreadStatus {
    pub fn is_finished(self) -> bool {
        matches!(self, ThreadStatus::Halted | ThreadStatus::Faulted(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThreadContext {
    /// Instruction index of the instruction in progress (or next to start).
    pub pc: usize,
    /// Position inside that instruction's micro-op list.
    pub micro: u8,
    pub regs: [Word; Reg::COUNT],
    pub frames: Vec<Frame>,
    pub status: ThreadStatus,
    /// Present only between acs-begin and acs-commit.
    pub reservation: Option<Reservation>,
    /// Value observed by acs-probe, consumed by acs-commit.
    pub probe: Option<Word>,
}

impl ThreadContext {
    pub fn new(entry: usize) -> Self {
        ThreadContext {
            pc: entry,
            micro: 0,
            regs: [Word(0); Reg::COUNT],
            frames: Vec::new(),
            status: ThreadStatus::Ready,
            reservation: None,
            probe: None,
        }
    }

    pub fn reg(&self, r: Reg) -> Word {
        self.regs[r.index()]
    }
}

/// Full machine configuration reached by some event sequence.
///
/// Memory is stored sparsely: absent addresses hold 0 and zero words are never
/// stored, so structural equality coincides with equality of the total map.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineState {
    pub memory: BTreeMap<Address, Word>,
    pub threads: Vec<ThreadContext>,
    /// The per-core "current thread" table.
    pub current: Vec<Option<ThreadId>>,
    /// Writes consumed so far by each device.
    pub device_writes: Vec<u32>,
    pub event_count: u64,
}

impl MachineState {
    pub fn word(&self, addr: Address) -> Word {
        self.memory.get(&addr).copied().unwrap_or_default()
    }

    pub(crate) fn set_word(&mut self, addr: Address, value: Word) {
        if value.0 == 0 {
            self.memory.remove(&addr);
        } else {
            self.memory.insert(addr, value);
        }
    }

    pub fn thread(&self, t: ThreadId) -> &ThreadContext {
        &self.threads[t.0]
    }

    /// Core currently running `t`, looked up through the per-core table.
    pub fn core_of(&self, t: ThreadId) -> Option<CoreId> {
        self.current.iter().position(|c| *c == Some(t)).map(CoreId)
    }

    pub fn is_active(&self, t: ThreadId) -> bool {
        self.core_of(t).is_some()
    }
}

impl Hash for MachineState {
    // event_count is deliberately left out: two interleavings that reach the
    // same configuration must hash equal.
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.memory.hash(state);
        self.threads.hash(state);
        self.current.hash(state);
        self.device_writes.hash(state);
    }
}

/// 64-bit digest over memory, thread contexts, the core table and device
/// budgets. Stable across runs and platforms.
pub fn state_hash(state: &MachineState) -> u64 {
    let mut h = FnvHasher::default();
    state.hash(&mut h);
    h.finish()
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum MachineError {
    #[error("event {event:?} is not enabled")]
    DisabledEvent { event: Event },
    #[error("event {event:?} at index {index} is not enabled")]
    DisabledEventAt { index: usize, event: Event },
}
