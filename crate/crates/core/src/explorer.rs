//! Enumeration of reachable event sequences.
//!
//! Exhaustive mode is a depth-first search in the deterministic order of
//! [`enabled_events`], with optional deduplication on the combined digest of
//! machine state and monitor state. Random mode runs seeded walks that choose
//! uniformly among the enabled events. Either way every explored edge is fed
//! to the monitor [`Suite`].
//!
//! The search is partitioned at the root: each first event owns a subtree
//! with its own visited set. Subtrees run on up to `workers` threads and are
//! merged in event order, so reports do not depend on the worker count.

use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use fnv::{FnvHashMap, FnvHasher};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::machine::{
    apply_unchecked, enabled_events, initial_state, state_hash, step, Event, EventSeq, MachineError, MachineState,
};
use crate::program::Scenario;
use crate::specmon::{Findings, MonitorKind, MonitorSet, Observation, Suite, SuiteState, Violation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Mode {
    Exhaustive,
    Random { seed: u64, walks: usize, len: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ExploreConfig {
    pub mode: Mode,
    pub max_events: usize,
    /// Expanded states per root partition.
    pub max_states: usize,
    pub dedup: bool,
    pub workers: usize,
}

impl ExploreConfig {
    pub fn exhaustive(max_events: usize) -> Self {
        ExploreConfig {
            mode: Mode::Exhaustive,
            max_events,
            max_states: crate::program::DEFAULT_MAX_STATES,
            dedup: true,
            workers: 1,
        }
    }

    pub fn random(seed: u64, walks: usize, len: usize) -> Self {
        ExploreConfig { mode: Mode::Random { seed, walks, len }, ..Self::exhaustive(len) }
    }

    /// Exhaustive search within the scenario's own declared bounds.
    pub fn for_scenario(scenario: &Scenario) -> Self {
        Self::exhaustive(scenario.max_events).with_max_states(scenario.max_states)
    }

    pub fn with_dedup(mut self, dedup: bool) -> Self {
        self.dedup = dedup;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_max_states(mut self, max_states: usize) -> Self {
        self.max_states = max_states;
        self
    }

    fn validate(&self) -> Result<(), ExploreError> {
        let bad = |m: &str| Err(ExploreError::InvalidConfig(m.to_string()));
        if self.max_events == 0 {
            return bad("max events must be positive");
        }
        if self.max_states == 0 {
            return bad("max states must be positive");
        }
        if self.workers == 0 {
            return bad("worker count must be positive");
        }
        if let Mode::Random { len, .. } = self.mode {
            if len > self.max_events {
                return bad("walk length exceeds max events");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ExploreError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// A violation together with the sequence that reaches it. Replaying
/// `sequence` reports the same violation at `index`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Counterexample {
    pub monitor: MonitorKind,
    pub message: String,
    pub index: usize,
    pub sequence: EventSeq,
}

impl Counterexample {
    pub fn violation(&self) -> Violation {
        Violation { monitor: self.monitor, message: self.message.clone() }
    }
}

/// A noteworthy non-failure, with its first witness and how often it was hit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ObservationRecord {
    pub kind: String,
    pub message: String,
    pub index: usize,
    pub witness: EventSeq,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TerminalState {
    pub hash: u64,
    pub witness: EventSeq,
    pub state: MachineState,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ExploreReport {
    pub states_visited: usize,
    pub sequences_explored: usize,
    /// Distinct terminal states ordered by hash, one witness each.
    pub terminal_states: Vec<TerminalState>,
    pub violations: Vec<Counterexample>,
    pub observations: Vec<ObservationRecord>,
    pub truncated: bool,
}

impl ExploreReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    /// Histogram of the final value of global `name` over distinct terminal
    /// states. Empty if the global does not exist.
    pub fn terminal_values(&self, scenario: &Scenario, name: &str) -> BTreeMap<u64, usize> {
        let mut out = BTreeMap::new();
        if let Some(g) = scenario.global(name) {
            for t in &self.terminal_states {
                *out.entry(t.state.word(g.addr).0).or_insert(0) += 1;
            }
        }
        out
    }

    /// First terminal witness whose global `name` ends at `value`.
    pub fn terminal_witness(&self, scenario: &Scenario, name: &str, value: u64) -> Option<&EventSeq> {
        let g = scenario.global(name)?;
        self.terminal_states.iter().find(|t| t.state.word(g.addr).0 == value).map(|t| &t.witness)
    }

    /// Distinct violations, ignoring where they were found.
    pub fn violation_set(&self) -> std::collections::BTreeSet<Violation> {
        self.violations.iter().map(Counterexample::violation).collect()
    }

    pub fn observations_of<'r>(&'r self, kind: &'r str) -> impl Iterator<Item = &'r ObservationRecord> + 'r {
        self.observations.iter().filter(move |o| o.kind == kind)
    }
}

/// Accumulates one partition's (or one walk batch's) results.
#[derive(Default)]
struct Accum {
    states_visited: usize,
    sequences_explored: usize,
    terminals: BTreeMap<u64, (EventSeq, MachineState)>,
    violations: Vec<Counterexample>,
    seen_violations: std::collections::BTreeSet<Violation>,
    observations: Vec<ObservationRecord>,
    seen_observations: BTreeMap<Observation, usize>,
    truncated: bool,
}

impl Accum {
    fn record(&mut self, findings: Findings, path: &EventSeq) {
        for v in findings.violations {
            if self.seen_violations.insert(v.clone()) {
                self.violations.push(Counterexample {
                    monitor: v.monitor,
                    message: v.message,
                    index: path.len(),
                    sequence: path.clone(),
                });
            }
        }
        for o in findings.observations {
            match self.seen_observations.get(&o) {
                Some(&k) => self.observations[k].count += 1,
                None => {
                    self.seen_observations.insert(o.clone(), self.observations.len());
                    self.observations.push(ObservationRecord {
                        kind: o.kind,
                        message: o.message,
                        index: path.len(),
                        witness: path.clone(),
                        count: 1,
                    });
                }
            }
        }
    }

    fn terminal(&mut self, state: &MachineState, path: &EventSeq) {
        self.terminals.entry(state_hash(state)).or_insert_with(|| (path.clone(), state.clone()));
    }

    /// Fold `other` in after `self`; earlier witnesses win.
    fn merge(&mut self, other: Accum) {
        self.states_visited += other.states_visited;
        self.sequences_explored += other.sequences_explored;
        self.truncated |= other.truncated;
        for (h, w) in other.terminals {
            self.terminals.entry(h).or_insert(w);
        }
        for c in other.violations {
            if self.seen_violations.insert(c.violation()) {
                self.violations.push(c);
            }
        }
        for o in other.observations {
            let key = Observation { kind: o.kind.clone(), message: o.message.clone() };
            match self.seen_observations.get(&key) {
                Some(&k) => self.observations[k].count += o.count,
                None => {
                    self.seen_observations.insert(key, self.observations.len());
                    self.observations.push(o);
                }
            }
        }
    }

    fn into_report(self) -> ExploreReport {
        ExploreReport {
            states_visited: self.states_visited,
            sequences_explored: self.sequences_explored,
            terminal_states: self
                .terminals
                .into_iter()
                .map(|(hash, (witness, state))| TerminalState { hash, witness, state })
                .collect(),
            violations: self.violations,
            observations: self.observations,
            truncated: self.truncated,
        }
    }
}

/// Called on every state reached during exhaustive search, with the monitor
/// state that accompanies it.
pub type Observer<'o> = &'o (dyn Fn(&MachineState, &SuiteState) + Sync);

struct Search<'a> {
    scenario: &'a Scenario,
    suite: &'a Suite<'a>,
    config: &'a ExploreConfig,
    observer: Option<Observer<'a>>,
    visited: FnvHashMap<u64, usize>,
    path: EventSeq,
    acc: Accum,
}

fn node_key(state: &MachineState, mon: &SuiteState) -> u64 {
    let mut h = FnvHasher::default();
    state.hash(&mut h);
    mon.hash(&mut h);
    h.finish()
}

impl Search<'_> {
    fn dfs(&mut self, state: &MachineState, mon: &SuiteState) {
        if let Some(obs) = self.observer {
            obs(state, mon);
        }
        let depth = self.path.len();
        if self.config.dedup {
            let key = node_key(state, mon);
            match self.visited.get(&key) {
                Some(&d) if d <= depth => {
                    self.acc.sequences_explored += 1;
                    return;
                }
                _ => {
                    self.visited.insert(key, depth);
                }
            }
        }
        let events = enabled_events(self.scenario, state);
        if events.is_empty() {
            self.acc.states_visited += 1;
            self.acc.sequences_explored += 1;
            self.acc.terminal(state, &self.path);
            return;
        }
        if depth >= self.config.max_events || self.acc.states_visited >= self.config.max_states {
            self.acc.sequences_explored += 1;
            self.acc.truncated = true;
            return;
        }
        self.acc.states_visited += 1;
        for e in events {
            self.edge(state, mon, e);
        }
    }

    fn edge(&mut self, state: &MachineState, mon: &SuiteState, e: Event) {
        let next = apply_unchecked(self.scenario, state, &e);
        let mut next_mon = mon.clone();
        let findings = self.suite.advance(&mut next_mon, state, &e, &next);
        self.path.push(e);
        self.acc.record(findings, &self.path);
        self.dfs(&next, &next_mon);
        self.path.pop();
    }
}

/// Explore `scenario` per `config`, judging with `monitors`.
pub fn explore(
    scenario: &Scenario,
    config: &ExploreConfig,
    monitors: &MonitorSet,
) -> Result<ExploreReport, ExploreError> {
    explore_with(scenario, config, monitors, None)
}

/// [`explore`] with an optional per-state observer (exhaustive mode only).
pub fn explore_with(
    scenario: &Scenario,
    config: &ExploreConfig,
    monitors: &MonitorSet,
    observer: Option<Observer<'_>>,
) -> Result<ExploreReport, ExploreError> {
    config.validate()?;
    if let Mode::Random { .. } = config.mode {
        return random_walks(scenario, config, monitors);
    }
    let suite = Suite::new(scenario, monitors);
    let s0 = initial_state(scenario);
    let (mon0, findings) = suite.start(&s0);
    let mut root = Accum::default();
    root.record(findings, &EventSeq::new());
    if let Some(obs) = observer {
        obs(&s0, &mon0);
    }

    let events = enabled_events(scenario, &s0);
    if events.is_empty() {
        root.states_visited = 1;
        root.sequences_explored = 1;
        root.terminal(&s0, &EventSeq::new());
        return Ok(root.into_report());
    }
    root.states_visited = 1;

    let subtree = |e: &Event| {
        let mut search = Search {
            scenario,
            suite: &suite,
            config,
            observer,
            visited: FnvHashMap::default(),
            path: EventSeq::new(),
            acc: Accum::default(),
        };
        search.edge(&s0, &mon0, *e);
        search.acc
    };
    let parts: Vec<Accum> = if config.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(config.workers).build().expect("thread pool");
        pool.install(|| events.par_iter().map(subtree).collect())
    } else {
        events.iter().map(subtree).collect()
    };
    for p in parts {
        root.merge(p);
    }
    Ok(root.into_report())
}

/// `walks` seeded random walks of at most `len` events each.
pub fn random_walks(
    scenario: &Scenario,
    config: &ExploreConfig,
    monitors: &MonitorSet,
) -> Result<ExploreReport, ExploreError> {
    config.validate()?;
    let Mode::Random { seed, walks, len } = config.mode else {
        return Err(ExploreError::InvalidConfig("random walks need random mode".into()));
    };
    let suite = Suite::new(scenario, monitors);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = Accum::default();
    let s0 = initial_state(scenario);
    for _ in 0..walks {
        let (mut mon, findings) = suite.start(&s0);
        let mut path = EventSeq::new();
        acc.record(findings, &path);
        let mut state = s0.clone();
        acc.states_visited += 1;
        acc.sequences_explored += 1;
        loop {
            let events = enabled_events(scenario, &state);
            if events.is_empty() {
                acc.terminal(&state, &path);
                break;
            }
            if path.len() >= len {
                acc.truncated = true;
                break;
            }
            let e = events[rng.gen_range(0..events.len())];
            let next = apply_unchecked(scenario, &state, &e);
            let findings = suite.advance(&mut mon, &state, &e, &next);
            path.push(e);
            acc.record(findings, &path);
            acc.states_visited += 1;
            state = next;
        }
    }
    Ok(acc.into_report())
}

/// Outcome of re-judging one sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    /// Every violation with the index of the state where it was detected.
    pub violations: Vec<(usize, Violation)>,
    pub observations: Vec<(usize, Observation)>,
    /// Monitor state at every index, `0..=len`.
    pub monitor_states: Vec<SuiteState>,
}

impl Verdict {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    /// Index at which `v` was first reported.
    pub fn index_of(&self, v: &Violation) -> Option<usize> {
        self.violations.iter().find(|(_, x)| x == v).map(|(i, _)| *i)
    }
}

/// Re-execute `seq` and judge every edge.
pub fn replay(scenario: &Scenario, seq: &EventSeq, monitors: &MonitorSet) -> Result<Verdict, MachineError> {
    let suite = Suite::new(scenario, monitors);
    let mut state = initial_state(scenario);
    let (mut mon, f0) = suite.start(&state);
    let mut verdict = Verdict { violations: Vec::new(), observations: Vec::new(), monitor_states: vec![mon.clone()] };
    let absorb = |verdict: &mut Verdict, i: usize, f: Findings| {
        verdict.violations.extend(f.violations.into_iter().map(|v| (i, v)));
        verdict.observations.extend(f.observations.into_iter().map(|o| (i, o)));
    };
    absorb(&mut verdict, 0, f0);
    for (index, e) in seq.iter().enumerate() {
        let next = step(scenario, &state, e).map_err(|_| MachineError::DisabledEventAt { index, event: *e })?;
        let f = suite.advance(&mut mon, &state, e, &next);
        absorb(&mut verdict, index + 1, f);
        verdict.monitor_states.push(mon.clone());
        state = next;
    }
    Ok(verdict)
}

/// Every maximal event sequence of at most `max_events` events, without
/// deduplication: each ends in a terminal state or at the bound.
pub fn maximal_sequences(scenario: &Scenario, max_events: usize) -> Vec<EventSeq> {
    fn go(sc: &Scenario, s: &MachineState, path: &mut EventSeq, max: usize, out: &mut Vec<EventSeq>) {
        let events = enabled_events(sc, s);
        if events.is_empty() || path.len() >= max {
            out.push(path.clone());
            return;
        }
        for e in events {
            let next = apply_unchecked(sc, s, &e);
            path.push(e);
            go(sc, &next, path, max, out);
            path.pop();
        }
    }
    let mut out = Vec::new();
    go(scenario, &initial_state(scenario), &mut EventSeq::new(), max_events, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::{builtin, parse};

    #[test]
    fn linear_chain_counts_states() {
        let sc = parse("thread t:\n li r1, 5\n halt\n").unwrap();
        let r = explore(&sc, &ExploreConfig::exhaustive(50), &MonitorSet::all()).unwrap();
        assert_eq!(r.states_visited, 3);
        assert_eq!(r.sequences_explored, 1);
        assert_eq!(r.terminal_states.len(), 1);
        assert!(!r.truncated);
    }

    #[test]
    fn zero_walks_is_empty() {
        let sc = builtin("lost-update").unwrap();
        let r = explore(&sc, &ExploreConfig::random(42, 0, 20), &MonitorSet::all()).unwrap();
        assert_eq!(r, ExploreReport::default());
    }

    #[test]
    fn bound_sets_truncated() {
        let sc = builtin("lost-update").unwrap();
        let r = explore(&sc, &ExploreConfig::exhaustive(3), &MonitorSet::all()).unwrap();
        assert!(r.truncated);
        assert!(r.terminal_states.is_empty());
    }

    #[test]
    fn invalid_configs_rejected() {
        let sc = builtin("lost-update").unwrap();
        let m = MonitorSet::all();
        assert!(explore(&sc, &ExploreConfig::exhaustive(0), &m).is_err());
        assert!(explore(&sc, &ExploreConfig::exhaustive(5).with_workers(0), &m).is_err());
        let mut c = ExploreConfig::random(1, 1, 10);
        c.max_events = 5;
        assert!(explore(&sc, &c, &m).is_err());
    }

    #[test]
    fn replay_of_empty_is_clean() {
        let sc = builtin("spinlock-increment").unwrap();
        let v = replay(&sc, &EventSeq::new(), &MonitorSet::all()).unwrap();
        assert!(v.is_clean());
        assert_eq!(v.monitor_states.len(), 1);
    }
}
