//! The mini instruction set, its micro-op decomposition, scenarios and the
//! scenario text format.

mod builtin;
mod parser;
mod render;

pub use builtin::{builtin, builtin_names, builtin_source, calculate_source, BuiltinError};
pub use parser::{parse, parse_bytes, parse_with_width, ParseError};
pub use render::render;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use std::hash::{Hash, Hasher};
use thiserror::Error;

use crate::machine::{Address, MachineState, ThreadId, Word, WordWidth};

pub const DEFAULT_MEMORY_WORDS: u32 = 1024;
pub const DEFAULT_MAX_EVENTS: usize = 200;
pub const DEFAULT_MAX_STATES: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Reg(u8);

impl Reg {
    pub const COUNT: usize = 8;

    pub fn new(index: u8) -> Option<Reg> {
        ((index as usize) < Self::COUNT).then_some(Reg(index))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// Register or immediate value operand.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Src {
    Reg(Reg),
    Imm(i64),
}

/// Memory operand. Names are resolved at load time: globals to a fixed
/// address, locals to an offset from the current frame base.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AddrOperand {
    Global { name: String, addr: Address },
    Absolute(Address),
    Local { name: String, offset: u32 },
    Indirect(Reg),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Opcode {
    Li,
    Mov,
    Load,
    Store,
    Add,
    Addi,
    Mul,
    Acs,
    Beqz,
    Bnez,
    Jmp,
    Call,
    Ret,
    Halt,
    Nop,
    Release,
}

impl Opcode {
    pub const ALL: [Opcode; 16] = [
        Opcode::Li,
        Opcode::Mov,
        Opcode::Load,
        Opcode::Store,
        Opcode::Add,
        Opcode::Addi,
        Opcode::Mul,
        Opcode::Acs,
        Opcode::Beqz,
        Opcode::Bnez,
        Opcode::Jmp,
        Opcode::Call,
        Opcode::Ret,
        Opcode::Halt,
        Opcode::Nop,
        Opcode::Release,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Opcode::Li => "li",
            Opcode::Mov => "mov",
            Opcode::Load => "load",
            Opcode::Store => "store",
            Opcode::Add => "add",
            Opcode::Addi => "addi",
            Opcode::Mul => "mul",
            Opcode::Acs => "acs",
            Opcode::Beqz => "beqz",
            Opcode::Bnez => "bnez",
            Opcode::Jmp => "jmp",
            Opcode::Call => "call",
            Opcode::Ret => "ret",
            Opcode::Halt => "halt",
            Opcode::Nop => "nop",
            Opcode::Release => "release",
        }
    }

    pub fn from_name(s: &str) -> Option<Opcode> {
        Self::ALL.into_iter().find(|op| op.name() == s)
    }

    pub fn arity(self) -> usize {
        match self {
            Opcode::Ret | Opcode::Halt | Opcode::Nop => 0,
            Opcode::Jmp | Opcode::Call | Opcode::Release => 1,
            Opcode::Li | Opcode::Mov | Opcode::Load | Opcode::Store | Opcode::Beqz | Opcode::Bnez => 2,
            Opcode::Add | Opcode::Addi | Opcode::Mul => 3,
            Opcode::Acs => 4,
        }
    }
}

/// A resolved instruction.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    Li {
        rd: Reg,
        imm: i64,
    },
    Mov {
        rd: Reg,
        rs: Reg,
    },
    Load {
        rd: Reg,
        addr: AddrOperand,
    },
    Store {
        addr: AddrOperand,
        src: Src,
    },
    Add {
        rd: Reg,
        ra: Reg,
        rb: Reg,
    },
    Addi {
        rd: Reg,
        ra: Reg,
        imm: i64,
    },
    Mul {
        rd: Reg,
        ra: Reg,
        rb: Reg,
    },
    Acs {
        rd: Reg,
        addr: AddrOperand,
        old: Src,
        new: Src,
    },
    Beqz {
        rs: Reg,
        label: String,
        target: usize,
    },
    Bnez {
        rs: Reg,
        label: String,
        target: usize,
    },
    Jmp {
        label: String,
        target: usize,
    },
    Call {
        func: usize,
        name: String,
    },
    Ret,
    Halt,
    Nop,
    /// Sugar for `store addr, 0`.
    Release {
        addr: AddrOperand,
    },
}

impl Op {
    pub fn opcode(&self) -> Opcode {
        match self {
            Op::Li { .. } => Opcode::Li,
            Op::Mov { .. } => Opcode::Mov,
            Op::Load { .. } => Opcode::Load,
            Op::Store { .. } => Opcode::Store,
            Op::Add { .. } => Opcode::Add,
            Op::Addi { .. } => Opcode::Addi,
            Op::Mul { .. } => Opcode::Mul,
            Op::Acs { .. } => Opcode::Acs,
            Op::Beqz { .. } => Opcode::Beqz,
            Op::Bnez { .. } => Opcode::Bnez,
            Op::Jmp { .. } => Opcode::Jmp,
            Op::Call { .. } => Opcode::Call,
            Op::Ret => Opcode::Ret,
            Op::Halt => Opcode::Halt,
            Op::Nop => Opcode::Nop,
            Op::Release { .. } => Opcode::Release,
        }
    }

    /// The memory operand, for instructions that touch memory.
    pub fn addr_operand(&self) -> Option<&AddrOperand> {
        match self {
            Op::Load { addr, .. } | Op::Store { addr, .. } | Op::Acs { addr, .. } | Op::Release { addr } => Some(addr),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub op: Op,
    /// 1-based source line; 0 for synthesized instructions.
    pub line: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MicroKind {
    Issue,
    CommitRead,
    CommitWrite,
    AcsBegin,
    AcsProbe,
    AcsCommit,
    CallEnter,
    CallExit,
    BoundaryOnly,
}

impl MicroKind {
    pub const ALL: [MicroKind; 9] = [
        MicroKind::Issue,
        MicroKind::CommitRead,
        MicroKind::CommitWrite,
        MicroKind::AcsBegin,
        MicroKind::AcsProbe,
        MicroKind::AcsCommit,
        MicroKind::CallEnter,
        MicroKind::CallExit,
        MicroKind::BoundaryOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MicroKind::Issue => "issue",
            MicroKind::CommitRead => "commit-read",
            MicroKind::CommitWrite => "commit-write",
            MicroKind::AcsBegin => "acs-begin",
            MicroKind::AcsProbe => "acs-probe",
            MicroKind::AcsCommit => "acs-commit",
            MicroKind::CallEnter => "call-enter",
            MicroKind::CallExit => "call-exit",
            MicroKind::BoundaryOnly => "boundary-only",
        }
    }

    pub fn from_name(s: &str) -> Option<MicroKind> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for MicroKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MicroOp {
    pub kind: MicroKind,
    /// Set on exactly the last micro-op of an instruction.
    pub boundary: bool,
}

/// Micro-op kinds an opcode executes, in order.
pub fn micro_kinds(opcode: Opcode) -> &'static [MicroKind] {
    use MicroKind::*;
    match opcode {
        Opcode::Load => &[Issue, CommitRead],
        Opcode::Store | Opcode::Release => &[Issue, CommitWrite],
        Opcode::Acs => &[AcsBegin, AcsProbe, AcsCommit],
        Opcode::Call => &[CallEnter],
        Opcode::Ret => &[CallExit],
        _ => &[BoundaryOnly],
    }
}

pub fn decompose(instr: &Instruction) -> Vec<MicroOp> {
    let kinds = micro_kinds(instr.op.opcode());
    kinds.iter().enumerate().map(|(i, &kind)| MicroOp { kind, boundary: i + 1 == kinds.len() }).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Function {
    pub name: String,
    pub entry: usize,
    /// Local variable names; a local's frame offset is its position here.
    pub locals: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Program {
    pub name: String,
    pub instructions: Vec<Instruction>,
    pub labels: BTreeMap<String, usize>,
    pub functions: Vec<Function>,
    /// Instruction indices inside `critical` blocks, with the guarding
    /// gateway name (`None` for an unguarded block).
    pub critical: BTreeMap<usize, Option<String>>,
}

impl Program {
    pub fn critical_lines(&self) -> BTreeSet<u32> {
        self.critical.keys().map(|&i| self.instructions[i].line).collect()
    }

    pub fn function_named(&self, name: &str) -> Option<usize> {
        self.functions.iter().position(|f| f.name == name)
    }

    /// Instruction indices that start a `load r, X; addi r, r, 1; store X, r`
    /// increment of a memory word.
    pub fn increment_heads(&self) -> Vec<usize> {
        let ins = &self.instructions;
        (0..ins.len().saturating_sub(2))
            .filter(|&i| match (&ins[i].op, &ins[i + 1].op, &ins[i + 2].op) {
                (
                    Op::Load { rd, addr },
                    Op::Addi { rd: rd2, ra, imm: 1 },
                    Op::Store { addr: addr2, src: Src::Reg(rs) },
                ) => rd == rd2 && rd == ra && rd == rs && addr == addr2,
                _ => false,
            })
            .collect()
    }
}

/// When a gateway's well-usedness tracking is switched on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    AtStart,
    Never,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Gateway {
    pub name: String,
    pub addr: Address,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Global {
    pub name: String,
    pub addr: Address,
    pub init: Word,
}

/// Memory-equality guard on a device move.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Guard {
    pub addr: Address,
    pub value: Word,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeviceMove {
    pub guard: Option<Guard>,
    pub target: Address,
    pub values: Vec<Word>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeviceScript {
    pub name: String,
    pub moves: Vec<DeviceMove>,
    pub budget: u32,
}

/// Postcondition attached to a function; checked on every non-interfered
/// call/return pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContractKind {
    /// `*ptr' = *ptr + m*m` and the return value is the old `*ptr`.
    SquareAdd { m: Reg, ptr: Reg, ret: Reg },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Contract {
    pub func: String,
    pub kind: ContractKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThreadSpec {
    pub name: String,
    pub program: Program,
}

/// Everything needed to build the initial state and drive exploration.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub width: WordWidth,
    pub memory_size: u32,
    pub cores: usize,
    pub preemption: bool,
    pub globals: Vec<Global>,
    pub gateways: Vec<Gateway>,
    pub devices: Vec<DeviceScript>,
    pub contracts: Vec<Contract>,
    pub threads: Vec<ThreadSpec>,
    pub max_events: usize,
    pub max_states: usize,
}

impl Scenario {
    pub fn initial_memory(&self) -> BTreeMap<Address, Word> {
        self.globals.iter().filter(|g| g.init.0 != 0).map(|g| (g.addr, g.init)).collect()
    }

    pub fn thread_id(&self, name: &str) -> Option<ThreadId> {
        self.threads.iter().position(|t| t.name == name).map(ThreadId)
    }

    pub fn program(&self, t: ThreadId) -> &Program {
        &self.threads[t.0].program
    }

    pub fn global(&self, name: &str) -> Option<&Global> {
        self.globals.iter().find(|g| g.name == name)
    }

    pub fn gateway(&self, name: &str) -> Option<&Gateway> {
        self.gateways.iter().find(|g| g.name == name)
    }

    pub fn contract_for(&self, func: &str) -> Option<&Contract> {
        self.contracts.iter().find(|c| c.func == func)
    }

    /// Stacks occupy the upper half of memory, split evenly across threads.
    /// Returns `[base, limit)` for thread `t`.
    pub fn stack_region(&self, t: ThreadId) -> (Address, Address) {
        let half = self.memory_size / 2;
        let n = self.threads.len().max(1) as u32;
        let slice = (self.memory_size - half) / n;
        let base = half + slice * t.0 as u32;
        (Address(base), Address(base + slice))
    }

    /// Stable digest of the rendered scenario, used in trace dump headers.
    pub fn digest(&self) -> u64 {
        let mut h = FnvHasher::default();
        render(self).hash(&mut h);
        h.finish()
    }

    /// Copy with every source line number cleared, for structural comparison.
    pub fn without_lines(&self) -> Scenario {
        let mut s = self.clone();
        for t in &mut s.threads {
            for i in &mut t.program.instructions {
                i.line = 0;
            }
        }
        s
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ResolveError {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("local `{0}` accessed with no active frame")]
    NoActiveFrame(String),
}

/// Address of variable `var` as seen by thread `thread` in `state`.
///
/// Globals resolve to their fixed address. Locals resolve against the
/// innermost frame whose function declares them, so the same name maps to
/// different addresses at different call depths.
pub fn resolve_addr(
    scenario: &Scenario,
    thread: ThreadId,
    var: &str,
    state: &MachineState,
) -> Result<Address, ResolveError> {
    if let Some(g) = scenario.global(var) {
        return Ok(g.addr);
    }
    let program = scenario.program(thread);
    let declared = program.functions.iter().any(|f| f.locals.iter().any(|l| l == var));
    if !declared {
        return Err(ResolveError::UnknownVariable(var.to_string()));
    }
    state
        .thread(thread)
        .frames
        .iter()
        .rev()
        .find_map(|frame| {
            let f = &program.functions[frame.func];
            f.locals.iter().position(|l| l == var).map(|off| Address(frame.base.0 + off as u32))
        })
        .ok_or_else(|| ResolveError::NoActiveFrame(var.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instr(op: Op) -> Instruction {
        Instruction { op, line: 1 }
    }

    #[test]
    fn store_commits_last() {
        let ops = decompose(&instr(Op::Store { addr: AddrOperand::Absolute(Address(1)), src: Src::Reg(Reg(1)) }));
        assert_eq!(ops.len(), 2);
        assert_eq!(ops[1].kind, MicroKind::CommitWrite);
        assert!(ops[1].boundary && !ops[0].boundary);
    }

    #[test]
    fn acs_has_three_phases() {
        let ops = decompose(&instr(Op::Acs {
            rd: Reg(0),
            addr: AddrOperand::Absolute(Address(1)),
            old: Src::Imm(0),
            new: Src::Imm(1),
        }));
        let kinds: Vec<_> = ops.iter().map(|m| m.kind).collect();
        assert_eq!(kinds, vec![MicroKind::AcsBegin, MicroKind::AcsProbe, MicroKind::AcsCommit]);
        assert!(ops[2].boundary);
    }

    #[test]
    fn nop_is_single_boundary() {
        let ops = decompose(&instr(Op::Nop));
        assert_eq!(ops, vec![MicroOp { kind: MicroKind::BoundaryOnly, boundary: true }]);
    }

    #[test]
    fn every_opcode_ends_with_unique_boundary() {
        for op in Opcode::ALL {
            let kinds = micro_kinds(op);
            assert!(!kinds.is_empty(), "{op:?}");
        }
        let samples = [
            Op::Li { rd: Reg(0), imm: 1 },
            Op::Load { rd: Reg(0), addr: AddrOperand::Indirect(Reg(1)) },
            Op::Call { func: 0, name: "f".into() },
            Op::Ret,
            Op::Halt,
            Op::Release { addr: AddrOperand::Absolute(Address(0)) },
        ];
        for op in samples {
            let ops = decompose(&instr(op));
            assert_eq!(ops.iter().filter(|m| m.boundary).count(), 1);
            assert!(ops.last().unwrap().boundary);
        }
    }

    #[test]
    fn opcode_names_roundtrip() {
        for op in Opcode::ALL {
            assert_eq!(Opcode::from_name(op.name()), Some(op));
        }
        for k in MicroKind::ALL {
            assert_eq!(MicroKind::from_name(k.name()), Some(k));
        }
    }
}
