//! Line-oriented scenario parser.
//!
//! ```text
//! scenario   := decl+
//! decl       := "global" NAME "=" INT ["@" INT]
//!             | "gateway" NAME "@" INT ["active"]
//!             | "device" NAME "writes" INT ("," INT)* "to" TARGET "budget" INT
//!                        ["when" TARGET "==" INT]
//!             | "contract" NAME "square-add" REG REG REG
//!             | "width" INT | "memory" INT | "cores" INT | "preempt"
//!             | "max-events" INT | "max-states" INT | "scenario" NAME
//!             | "thread" NAME ":" line+
//! line       := [LABEL ":"] opcode operands
//!             | "critical" [NAME] "{" | "}"
//!             | "func" NAME ["local" NAME ("," NAME)*] ":"
//! ```

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::{
    Activation, AddrOperand, Contract, ContractKind, DeviceMove, DeviceScript, Function, Gateway, Global, Guard,
    Instruction, Op, Opcode, Program, Reg, Scenario, Src, ThreadSpec, DEFAULT_MAX_EVENTS, DEFAULT_MAX_STATES,
    DEFAULT_MEMORY_WORDS,
};
use crate::machine::{Address, WordWidth};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("{line}:{col}: {message}")]
    Syntax { line: u32, col: u32, message: String },
    #[error("{line}: unresolved label `{label}`")]
    UnresolvedLabel { line: u32, label: String },
    #[error("{line}: duplicate thread `{name}`")]
    DuplicateThread { line: u32, name: String },
    #[error("{line}: `{opcode}` takes {expected} operand(s), found {found}")]
    BadArity { line: u32, opcode: String, expected: usize, found: usize },
    #[error("{line}: unknown variable `{name}`")]
    UnknownVariable { line: u32, name: String },
}

impl ParseError {
    pub fn line(&self) -> u32 {
        match self {
            ParseError::Syntax { line, .. }
            | ParseError::UnresolvedLabel { line, .. }
            | ParseError::DuplicateThread { line, .. }
            | ParseError::BadArity { line, .. }
            | ParseError::UnknownVariable { line, .. } => *line,
        }
    }
}

fn syntax(line: u32, col: u32, message: impl Into<String>) -> ParseError {
    ParseError::Syntax { line, col, message: message.into() }
}

/// Parse scenario text with the default 32-bit word width.
pub fn parse(text: &str) -> Result<Scenario, ParseError> {
    parse_with_width(text, WordWidth::default())
}

/// Parse raw bytes. Never panics; invalid UTF-8 is a syntax error.
pub fn parse_bytes(bytes: &[u8]) -> Result<Scenario, ParseError> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse(text),
        Err(e) => {
            let prefix = &bytes[..e.valid_up_to()];
            let line = 1 + prefix.iter().filter(|&&b| b == b'\n').count() as u32;
            let col = 1 + prefix.iter().rev().take_while(|&&b| b != b'\n').count() as u32;
            Err(syntax(line, col, "invalid UTF-8"))
        }
    }
}

/// Parse with `default_width` used when the text has no `width` directive.
pub fn parse_with_width(text: &str, default_width: WordWidth) -> Result<Scenario, ParseError> {
    let mut p = Parser::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i as u32 + 1;
        let toks = lex(raw, line)?;
        if toks.is_empty() {
            continue;
        }
        p.line(Cursor { toks: &toks, pos: 0, line, end_col: raw.chars().count() as u32 + 1 })?;
    }
    p.close_thread()?;
    p.finish(default_width)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i128),
    Punct(char),
    EqEq,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    col: u32,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')
}

fn lex(line_text: &str, line: u32) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = line_text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i as u32 + 1;
        if c == '#' {
            break;
        }
        if c.is_whitespace() {
            i += 1;
        } else if is_ident_start(c) {
            let start = i;
            while i < chars.len() && is_ident_char(chars[i]) {
                i += 1;
            }
            out.push(Token { tok: Tok::Ident(chars[start..i].iter().collect()), col });
        } else if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            i += 1;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let text: String = chars[start..i].iter().filter(|&&c| c != '_').collect();
            let (neg, digits) = match text.strip_prefix('-') {
                Some(rest) => (true, rest),
                None => (false, text.as_str()),
            };
            let magnitude = match digits.strip_prefix("0x").or_else(|| digits.strip_prefix("0X")) {
                Some(hex) => i128::from_str_radix(hex, 16),
                None => digits.parse::<i128>(),
            }
            .map_err(|_| syntax(line, col, format!("malformed integer `{text}`")))?;
            let value = if neg { -magnitude } else { magnitude };
            if value < i64::MIN as i128 || value > u64::MAX as i128 {
                return Err(syntax(line, col, format!("integer `{text}` does not fit in 64 bits")));
            }
            out.push(Token { tok: Tok::Int(value), col });
        } else if c == '=' && chars.get(i + 1) == Some(&'=') {
            out.push(Token { tok: Tok::EqEq, col });
            i += 2;
        } else if matches!(c, ',' | ':' | '{' | '}' | '[' | ']' | '=' | '@') {
            out.push(Token { tok: Tok::Punct(c), col });
            i += 1;
        } else {
            return Err(syntax(line, col, format!("unexpected character `{c}`")));
        }
    }
    Ok(out)
}

struct Cursor<'t> {
    toks: &'t [Token],
    pos: usize,
    line: u32,
    end_col: u32,
}

impl Cursor<'_> {
    fn col(&self) -> u32 {
        self.toks.get(self.pos).map_or(self.end_col, |t| t.col)
    }

    fn err(&self, message: impl Into<String>) -> ParseError {
        syntax(self.line, self.col(), message)
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, ahead: usize) -> Option<&Tok> {
        self.toks.get(self.pos + ahead).map(|t| &t.tok)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        self.pos += 1;
        t
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Punct(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, c: char) -> Result<(), ParseError> {
        if self.eat_punct(c) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{c}`")))
        }
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Ident(s)) if s == kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{kw}`")))
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn expect_int(&mut self, what: &str) -> Result<i128, ParseError> {
        match self.peek() {
            Some(Tok::Int(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(v)
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn expect_count(&mut self, what: &str) -> Result<u64, ParseError> {
        let col = self.col();
        let v = self.expect_int(what)?;
        u64::try_from(v).map_err(|_| syntax(self.line, col, format!("{what} must be non-negative")))
    }

    fn expect_end(&self) -> Result<(), ParseError> {
        if self.at_end() {
            Ok(())
        } else {
            Err(self.err("unexpected trailing tokens"))
        }
    }
}

fn parse_reg(s: &str) -> Option<Option<Reg>> {
    let digits = s.strip_prefix('r')?;
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    Some(digits.parse::<u8>().ok().and_then(Reg::new))
}

#[derive(Debug, Clone)]
enum RawOperand {
    Reg(Reg),
    Int(i128),
    Name(String),
    Indirect(Reg),
}

#[derive(Debug, Clone)]
struct RawInstr {
    opcode: Opcode,
    operands: Vec<(RawOperand, u32)>,
    line: u32,
    func: Option<usize>,
}

#[derive(Debug, Clone)]
struct RawFunc {
    name: String,
    locals: Vec<String>,
    entry: usize,
    line: u32,
}

#[derive(Debug, Clone)]
struct RawThread {
    name: String,
    line: u32,
    instrs: Vec<RawInstr>,
    labels: BTreeMap<String, usize>,
    funcs: Vec<RawFunc>,
    critical: BTreeMap<usize, (Option<String>, u32)>,
    open_critical: Option<(Option<String>, u32)>,
}

#[derive(Debug, Clone)]
enum RawTarget {
    Name(String),
    Addr(i128),
}

#[derive(Debug, Clone)]
struct RawDevice {
    name: String,
    values: Vec<i128>,
    target: RawTarget,
    budget: u64,
    guard: Option<(RawTarget, i128)>,
    line: u32,
}

#[derive(Default)]
struct Parser {
    name: Option<String>,
    width: Option<(u64, u32)>,
    memory: Option<(u64, u32)>,
    cores: Option<(u64, u32)>,
    preemption: bool,
    max_events: Option<(u64, u32)>,
    max_states: Option<(u64, u32)>,
    globals: Vec<(String, i128, Option<i128>, u32)>,
    gateways: Vec<(String, i128, Activation, u32)>,
    devices: Vec<RawDevice>,
    contracts: Vec<(String, ContractKind, u32)>,
    threads: Vec<RawThread>,
    current: Option<RawThread>,
}

const DIRECTIVES: &[&str] = &[
    "scenario",
    "width",
    "memory",
    "cores",
    "preempt",
    "max-events",
    "max-states",
    "global",
    "gateway",
    "device",
    "contract",
    "thread",
];

impl Parser {
    fn line(&mut self, mut c: Cursor<'_>) -> Result<(), ParseError> {
        let line = c.line;
        let keyword = match c.peek() {
            Some(Tok::Ident(k)) if DIRECTIVES.contains(&k.as_str()) => Some(k.clone()),
            _ => None,
        };
        let Some(keyword) = keyword else {
            return match self.current.as_mut() {
                Some(thread) => thread_line(thread, c),
                None => Err(c.err("expected a declaration")),
            };
        };
        self.close_thread()?;
        c.bump();
        match keyword.as_str() {
            "scenario" => self.name = Some(c.expect_ident("scenario name")?),
            "width" => self.width = Some((c.expect_count("word width")?, line)),
            "memory" => self.memory = Some((c.expect_count("memory size")?, line)),
            "cores" => self.cores = Some((c.expect_count("core count")?, line)),
            "preempt" => self.preemption = true,
            "max-events" => self.max_events = Some((c.expect_count("event bound")?, line)),
            "max-states" => self.max_states = Some((c.expect_count("state bound")?, line)),
            "global" => {
                let name = c.expect_ident("global name")?;
                c.expect_punct('=')?;
                let init = c.expect_int("initial value")?;
                let addr = if c.eat_punct('@') { Some(c.expect_int("address")?) } else { None };
                self.globals.push((name, init, addr, line));
            }
            "gateway" => {
                let name = c.expect_ident("gateway name")?;
                c.expect_punct('@')?;
                let addr = c.expect_int("address")?;
                let activation = if c.eat_keyword("active") { Activation::AtStart } else { Activation::Never };
                self.gateways.push((name, addr, activation, line));
            }
            "device" => {
                let name = c.expect_ident("device name")?;
                c.expect_keyword("writes")?;
                let mut values = vec![c.expect_int("value")?];
                while c.eat_punct(',') {
                    values.push(c.expect_int("value")?);
                }
                c.expect_keyword("to")?;
                let dest = target(&mut c)?;
                c.expect_keyword("budget")?;
                let budget = c.expect_count("budget")?;
                let guard = if c.eat_keyword("when") {
                    let t = target(&mut c)?;
                    if c.peek() != Some(&Tok::EqEq) {
                        return Err(c.err("expected `==`"));
                    }
                    c.bump();
                    Some((t, c.expect_int("guard value")?))
                } else {
                    None
                };
                self.devices.push(RawDevice { name, values, target: dest, budget, guard, line });
            }
            "contract" => {
                let func = c.expect_ident("function name")?;
                c.expect_keyword("square-add")?;
                let mut regs = [Reg(0); 3];
                for r in regs.iter_mut() {
                    let col = c.col();
                    let s = c.expect_ident("register")?;
                    *r = match parse_reg(&s) {
                        Some(Some(r)) => r,
                        _ => return Err(syntax(line, col, format!("expected register, found `{s}`"))),
                    };
                }
                self.contracts.push((func, ContractKind::SquareAdd { m: regs[0], ptr: regs[1], ret: regs[2] }, line));
            }
            "thread" => {
                let name = c.expect_ident("thread name")?;
                c.expect_punct(':')?;
                c.expect_end()?;
                if self.threads.iter().any(|t| t.name == name) {
                    return Err(ParseError::DuplicateThread { line, name });
                }
                self.current = Some(RawThread {
                    name,
                    line,
                    instrs: Vec::new(),
                    labels: BTreeMap::new(),
                    funcs: Vec::new(),
                    critical: BTreeMap::new(),
                    open_critical: None,
                });
                return Ok(());
            }
            _ => unreachable!(),
        }
        c.expect_end()
    }

    fn close_thread(&mut self) -> Result<(), ParseError> {
        let Some(t) = self.current.take() else { return Ok(()) };
        if let Some((_, line)) = t.open_critical {
            return Err(syntax(line, 1, "unclosed critical block"));
        }
        if t.instrs.is_empty() {
            return Err(syntax(t.line, 1, format!("thread `{}` has no instructions", t.name)));
        }
        self.threads.push(t);
        Ok(())
    }

    fn finish(self, default_width: WordWidth) -> Result<Scenario, ParseError> {
        if self.threads.is_empty() {
            return Err(syntax(1, 1, "no thread declared"));
        }
        let width = match self.width {
            Some((bits, line)) => WordWidth::new(bits.min(u32::MAX as u64) as u32)
                .ok_or_else(|| syntax(line, 1, "word width must be between 1 and 64"))?,
            None => default_width,
        };
        let memory_size = match self.memory {
            Some((m, line)) if !(2..=1 << 20).contains(&m) => {
                return Err(syntax(line, 1, "memory size must be between 2 and 1048576 words"))
            }
            Some((m, _)) => m as u32,
            None => DEFAULT_MEMORY_WORDS,
        };
        let cores = match self.cores {
            Some((0, line)) => return Err(syntax(line, 1, "core count must be positive")),
            Some((n, line)) if n > 64 => return Err(syntax(line, 1, "at most 64 cores")),
            Some((n, _)) => n as usize,
            None => self.threads.len(),
        };
        let bound = |b: Option<(u64, u32)>, default: usize, what: &str| match b {
            Some((0, line)) => Err(syntax(line, 1, format!("{what} must be positive"))),
            Some((n, _)) => Ok(n.min(usize::MAX as u64) as usize),
            None => Ok(default),
        };
        let max_events = bound(self.max_events, DEFAULT_MAX_EVENTS, "max-events")?;
        let max_states = bound(self.max_states, DEFAULT_MAX_STATES, "max-states")?;

        let data_limit = memory_size / 2;
        let check_addr = |a: i128, line: u32| -> Result<Address, ParseError> {
            if a < 0 || a >= data_limit as i128 {
                Err(syntax(line, 1, format!("address {a} outside data memory [0, {data_limit})")))
            } else {
                Ok(Address(a as u32))
            }
        };

        // Globals: explicit addresses first, then fill gaps from 0.
        let mut globals: Vec<(String, i128, Option<Address>, u32)> = Vec::new();
        for (name, init, addr, line) in &self.globals {
            if globals.iter().any(|g| &g.0 == name) {
                return Err(syntax(*line, 1, format!("duplicate global `{name}`")));
            }
            let addr = addr.map(|a| check_addr(a, *line)).transpose()?;
            globals.push((name.clone(), *init, addr, *line));
        }
        let mut gateways = Vec::new();
        for (name, addr, activation, line) in &self.gateways {
            let addr = check_addr(*addr, *line)?;
            if gateways.iter().any(|g: &Gateway| &g.name == name) {
                return Err(syntax(*line, 1, format!("duplicate gateway `{name}`")));
            }
            match globals.iter_mut().find(|g| &g.0 == name) {
                Some(g) => match g.2 {
                    Some(a) if a != addr => {
                        return Err(syntax(*line, 1, format!("gateway `{name}` address differs from its global")))
                    }
                    _ => g.2 = Some(addr),
                },
                None => globals.push((name.clone(), 0, Some(addr), *line)),
            }
            gateways.push(Gateway { name: name.clone(), addr, activation: *activation });
        }
        let mut used = BTreeSet::new();
        for (name, _, addr, line) in &globals {
            if let Some(a) = addr {
                if !used.insert(*a) {
                    return Err(syntax(*line, 1, format!("global `{name}` shares address {a}")));
                }
            }
        }
        let mut next_free = 0u32;
        let mut resolved_globals = Vec::new();
        for (name, init, addr, line) in globals {
            let addr = match addr {
                Some(a) => a,
                None => {
                    while used.contains(&Address(next_free)) {
                        next_free += 1;
                    }
                    if next_free >= data_limit {
                        return Err(syntax(line, 1, "out of data memory for globals"));
                    }
                    used.insert(Address(next_free));
                    Address(next_free)
                }
            };
            resolved_globals.push(Global { name, addr, init: width.wrap(init as u64) });
        }

        let lookup = |name: &str, line: u32| -> Result<Address, ParseError> {
            resolved_globals
                .iter()
                .find(|g| g.name == name)
                .map(|g| g.addr)
                .ok_or_else(|| ParseError::UnknownVariable { line, name: name.to_string() })
        };
        let resolve_target = |t: &RawTarget, line: u32| match t {
            RawTarget::Name(n) => lookup(n, line),
            RawTarget::Addr(a) => {
                if *a < 0 || *a >= memory_size as i128 {
                    Err(syntax(line, 1, format!("address {a} out of range")))
                } else {
                    Ok(Address(*a as u32))
                }
            }
        };

        let mut names: BTreeSet<&str> = self.threads.iter().map(|t| t.name.as_str()).collect();
        names.insert("sched");
        if let Some(t) = self.threads.iter().find(|t| t.name == "sched") {
            return Err(syntax(t.line, 1, "`sched` is reserved"));
        }
        let mut devices = Vec::new();
        for d in &self.devices {
            if !names.insert(d.name.as_str()) {
                return Err(syntax(d.line, 1, format!("device name `{}` already in use", d.name)));
            }
            let guard = match &d.guard {
                Some((t, v)) => Some(Guard { addr: resolve_target(t, d.line)?, value: width.wrap(*v as u64) }),
                None => None,
            };
            devices.push(DeviceScript {
                name: d.name.clone(),
                moves: vec![DeviceMove {
                    guard,
                    target: resolve_target(&d.target, d.line)?,
                    values: d.values.iter().map(|v| width.wrap(*v as u64)).collect(),
                }],
                budget: d.budget.min(u32::MAX as u64) as u32,
            });
        }

        let mut threads = Vec::new();
        for raw in &self.threads {
            threads.push(build_thread(raw, &resolved_globals, &gateways, memory_size)?);
        }

        let mut contracts = Vec::new();
        for (func, kind, line) in &self.contracts {
            if !threads.iter().any(|t: &ThreadSpec| t.program.function_named(func).is_some()) {
                return Err(ParseError::UnresolvedLabel { line: *line, label: func.clone() });
            }
            contracts.push(Contract { func: func.clone(), kind: *kind });
        }

        Ok(Scenario {
            name: self.name.unwrap_or_else(|| "scenario".to_string()),
            width,
            memory_size,
            cores,
            preemption: self.preemption,
            globals: resolved_globals,
            gateways,
            devices,
            contracts,
            threads,
            max_events,
            max_states,
        })
    }
}

fn target(c: &mut Cursor<'_>) -> Result<RawTarget, ParseError> {
    match c.bump() {
        Some(Tok::Ident(n)) => Ok(RawTarget::Name(n)),
        Some(Tok::Int(a)) => Ok(RawTarget::Addr(a)),
        _ => {
            c.pos -= 1;
            Err(c.err("expected a variable name or address"))
        }
    }
}

fn thread_line(t: &mut RawThread, mut c: Cursor<'_>) -> Result<(), ParseError> {
    let line = c.line;
    if c.eat_punct('}') {
        c.expect_end()?;
        return match t.open_critical.take() {
            Some(_) => Ok(()),
            None => Err(syntax(line, 1, "`}` without open critical block")),
        };
    }
    if c.eat_keyword("func") {
        if t.open_critical.is_some() {
            return Err(c.err("function declared inside critical block"));
        }
        let name = c.expect_ident("function name")?;
        let mut locals = Vec::new();
        if c.eat_keyword("local") {
            loop {
                let col = c.col();
                let l = c.expect_ident("local name")?;
                if locals.contains(&l) {
                    return Err(syntax(line, col, format!("duplicate local `{l}`")));
                }
                locals.push(l);
                if !c.eat_punct(',') {
                    break;
                }
            }
        }
        c.expect_punct(':')?;
        c.expect_end()?;
        if t.funcs.iter().any(|f| f.name == name) {
            return Err(syntax(line, 1, format!("duplicate function `{name}`")));
        }
        t.funcs.push(RawFunc { name, locals, entry: t.instrs.len(), line });
        return Ok(());
    }
    if matches!(c.peek(), Some(Tok::Ident(k)) if k == "critical")
        && matches!(c.peek_at(1), Some(Tok::Punct('{')) | Some(Tok::Ident(_)))
    {
        c.bump();
        if t.open_critical.is_some() {
            return Err(c.err("nested critical block"));
        }
        let guard = match c.peek() {
            Some(Tok::Ident(_)) => Some(c.expect_ident("gateway name")?),
            _ => None,
        };
        c.expect_punct('{')?;
        c.expect_end()?;
        t.open_critical = Some((guard, line));
        return Ok(());
    }
    if matches!(c.peek(), Some(Tok::Ident(_))) && c.peek_at(1) == Some(&Tok::Punct(':')) {
        let col = c.col();
        let label = c.expect_ident("label")?;
        c.bump();
        if parse_reg(&label).is_some() {
            return Err(syntax(line, col, format!("label `{label}` looks like a register")));
        }
        if t.labels.insert(label.clone(), t.instrs.len()).is_some() {
            return Err(syntax(line, col, format!("duplicate label `{label}`")));
        }
        if c.at_end() {
            return Ok(());
        }
    }
    let col = c.col();
    let mnemonic = c.expect_ident("opcode")?;
    let opcode =
        Opcode::from_name(&mnemonic).ok_or_else(|| syntax(line, col, format!("unknown opcode `{mnemonic}`")))?;
    let mut operands = Vec::new();
    if !c.at_end() {
        loop {
            let col = c.col();
            let op = match c.bump() {
                Some(Tok::Ident(s)) => match parse_reg(&s) {
                    Some(Some(r)) => RawOperand::Reg(r),
                    Some(None) => return Err(syntax(line, col, format!("no such register `{s}`"))),
                    None => RawOperand::Name(s),
                },
                Some(Tok::Int(v)) => RawOperand::Int(v),
                Some(Tok::Punct('[')) => {
                    let rcol = c.col();
                    let s = c.expect_ident("register")?;
                    let r = match parse_reg(&s) {
                        Some(Some(r)) => r,
                        _ => return Err(syntax(line, rcol, format!("expected register, found `{s}`"))),
                    };
                    c.expect_punct(']')?;
                    RawOperand::Indirect(r)
                }
                _ => return Err(syntax(line, col, "expected operand")),
            };
            operands.push((op, col));
            if c.at_end() {
                break;
            }
            c.expect_punct(',')?;
        }
    }
    if operands.len() != opcode.arity() {
        return Err(ParseError::BadArity { line, opcode: mnemonic, expected: opcode.arity(), found: operands.len() });
    }
    if let Some((guard, _)) = &t.open_critical {
        t.critical.insert(t.instrs.len(), (guard.clone(), line));
    }
    let func = if t.funcs.is_empty() { None } else { Some(t.funcs.len() - 1) };
    t.instrs.push(RawInstr { opcode, operands, line, func });
    Ok(())
}

fn build_thread(
    raw: &RawThread,
    globals: &[Global],
    gateways: &[Gateway],
    memory_size: u32,
) -> Result<ThreadSpec, ParseError> {
    let mut instructions = Vec::with_capacity(raw.instrs.len());
    for ri in &raw.instrs {
        let line = ri.line;
        let ops = &ri.operands;
        let reg = |i: usize| -> Result<Reg, ParseError> {
            match &ops[i].0 {
                RawOperand::Reg(r) => Ok(*r),
                _ => Err(syntax(line, ops[i].1, "expected register")),
            }
        };
        let imm = |i: usize| -> Result<i64, ParseError> {
            match &ops[i].0 {
                RawOperand::Int(v) => Ok(*v as i64),
                _ => Err(syntax(line, ops[i].1, "expected integer")),
            }
        };
        let src = |i: usize| -> Result<Src, ParseError> {
            match &ops[i].0 {
                RawOperand::Reg(r) => Ok(Src::Reg(*r)),
                RawOperand::Int(v) => Ok(Src::Imm(*v as i64)),
                _ => Err(syntax(line, ops[i].1, "expected register or integer")),
            }
        };
        let label = |i: usize| -> Result<(String, usize), ParseError> {
            match &ops[i].0 {
                RawOperand::Name(n) => match raw.labels.get(n) {
                    Some(&target) => Ok((n.clone(), target)),
                    None => Err(ParseError::UnresolvedLabel { line, label: n.clone() }),
                },
                _ => Err(syntax(line, ops[i].1, "expected label")),
            }
        };
        let addr = |i: usize| -> Result<AddrOperand, ParseError> {
            match &ops[i].0 {
                RawOperand::Name(n) => {
                    if let Some(off) = ri.func.and_then(|f| raw.funcs[f].locals.iter().position(|l| l == n)) {
                        return Ok(AddrOperand::Local { name: n.clone(), offset: off as u32 });
                    }
                    globals
                        .iter()
                        .find(|g| &g.name == n)
                        .map(|g| AddrOperand::Global { name: n.clone(), addr: g.addr })
                        .ok_or_else(|| ParseError::UnknownVariable { line, name: n.clone() })
                }
                RawOperand::Int(a) if *a >= 0 && *a < memory_size as i128 => {
                    Ok(AddrOperand::Absolute(Address(*a as u32)))
                }
                RawOperand::Int(a) => Err(syntax(line, ops[i].1, format!("address {a} out of range"))),
                RawOperand::Indirect(r) => Ok(AddrOperand::Indirect(*r)),
                RawOperand::Reg(_) => Err(syntax(line, ops[i].1, "expected address, found register")),
            }
        };
        let op = match ri.opcode {
            Opcode::Li => Op::Li { rd: reg(0)?, imm: imm(1)? },
            Opcode::Mov => Op::Mov { rd: reg(0)?, rs: reg(1)? },
            Opcode::Load => Op::Load { rd: reg(0)?, addr: addr(1)? },
            Opcode::Store => Op::Store { addr: addr(0)?, src: src(1)? },
            Opcode::Add => Op::Add { rd: reg(0)?, ra: reg(1)?, rb: reg(2)? },
            Opcode::Addi => Op::Addi { rd: reg(0)?, ra: reg(1)?, imm: imm(2)? },
            Opcode::Mul => Op::Mul { rd: reg(0)?, ra: reg(1)?, rb: reg(2)? },
            Opcode::Acs => Op::Acs { rd: reg(0)?, addr: addr(1)?, old: src(2)?, new: src(3)? },
            Opcode::Beqz => {
                let (label, target) = label(1)?;
                Op::Beqz { rs: reg(0)?, label, target }
            }
            Opcode::Bnez => {
                let (label, target) = label(1)?;
                Op::Bnez { rs: reg(0)?, label, target }
            }
            Opcode::Jmp => {
                let (label, target) = label(0)?;
                Op::Jmp { label, target }
            }
            Opcode::Call => match &ops[0].0 {
                RawOperand::Name(n) => match raw.funcs.iter().position(|f| &f.name == n) {
                    Some(func) => Op::Call { func, name: n.clone() },
                    None => return Err(ParseError::UnresolvedLabel { line, label: n.clone() }),
                },
                _ => return Err(syntax(line, ops[0].1, "expected function name")),
            },
            Opcode::Ret => Op::Ret,
            Opcode::Halt => Op::Halt,
            Opcode::Nop => Op::Nop,
            Opcode::Release => Op::Release { addr: addr(0)? },
        };
        instructions.push(Instruction { op, line });
    }

    let mut critical = BTreeMap::new();
    for (&idx, (guard, line)) in &raw.critical {
        let guard = match guard {
            Some(name) => {
                if !gateways.iter().any(|g| &g.name == name) {
                    return Err(syntax(*line, 1, format!("`{name}` is not a gateway")));
                }
                Some(name.clone())
            }
            None => match gateways {
                [] => None,
                [only] => Some(only.name.clone()),
                _ => return Err(syntax(*line, 1, "critical block must name its gateway")),
            },
        };
        critical.insert(idx, guard);
    }

    for f in &raw.funcs {
        if f.entry >= raw.instrs.len() {
            return Err(syntax(f.line, 1, format!("function `{}` has no body", f.name)));
        }
    }

    Ok(ThreadSpec {
        name: raw.name.clone(),
        program: Program {
            name: raw.name.clone(),
            instructions,
            labels: raw.labels.clone(),
            functions: raw
                .funcs
                .iter()
                .map(|f| Function { name: f.name.clone(), entry: f.entry, locals: f.locals.clone() })
                .collect(),
            critical,
        },
    })
}
