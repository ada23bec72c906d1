mod common;

use std::collections::HashMap;

use weaver::explorer::replay;
use weaver::machine::{
    enabled_events, initial_state, run, state_hash, step, Address, Event, EventSeq, MachineError, MachineState,
    ThreadId, Trace, Word,
};
use weaver::program::{builtin, parse, resolve_addr, MicroKind, ResolveError};
use weaver::specmon::{check_memory_change, MonitorKind, MonitorSet, Suite};

/// Run thread `t` until it has nothing enabled, returning the events taken.
fn drive(sc: &weaver::Scenario, state: &mut MachineState, t: usize, limit: usize) -> Vec<Event> {
    let mut taken = Vec::new();
    while taken.len() < limit {
        let Some(e) = enabled_events(sc, state).into_iter().find(|e| e.thread() == Some(ThreadId(t))) else { break };
        *state = step(sc, state, &e).unwrap();
        taken.push(e);
    }
    taken
}

#[test]
fn lost_update_single_thread_micro_ops() {
    let sc = builtin("lost-update").unwrap();
    let mut s = initial_state(&sc);
    let kinds: Vec<MicroKind> = drive(&sc, &mut s, 0, 100).iter().map(|e| e.micro_kind().unwrap()).collect();
    use MicroKind::*;
    assert_eq!(kinds, [Issue, CommitRead, BoundaryOnly, Issue, CommitWrite, BoundaryOnly]);
    assert_eq!(s.word(sc.global("x").unwrap().addr), Word(1));
}

#[test]
fn store_issue_leaves_memory_unchanged() {
    let sc = builtin("lost-update").unwrap();
    let x = sc.global("x").unwrap().addr;
    let mut s = initial_state(&sc);
    drive(&sc, &mut s, 0, 3);
    let issue = Event::micro(0, MicroKind::Issue);
    let after_issue = step(&sc, &s, &issue).unwrap();
    assert_eq!(after_issue.memory, s.memory);
    let after_commit = step(&sc, &after_issue, &Event::micro(0, MicroKind::CommitWrite)).unwrap();
    assert_eq!(after_commit.word(x), Word(1));
}

#[test]
fn disabled_events_are_rejected() {
    let sc = builtin("lost-update").unwrap();
    let s0 = initial_state(&sc);
    let bad = Event::micro(0, MicroKind::CommitWrite);
    assert_eq!(step(&sc, &s0, &bad), Err(MachineError::DisabledEvent { event: bad }));
    let seq: EventSeq = vec![Event::micro(0, MicroKind::Issue), bad].into();
    assert!(matches!(run(&sc, &seq), Err(MachineError::DisabledEventAt { index: 1, .. })));
}

#[test]
fn device_write_lands_in_memory() {
    let sc = builtin("device-clobber").unwrap();
    let s0 = initial_state(&sc);
    let e = Event::device_write(0, 512, 99);
    assert!(enabled_events(&sc, &s0).contains(&e));
    let s1 = step(&sc, &s0, &e).unwrap();
    assert_eq!(s1.word(Address(512)), Word(99));
    // The budget is spent.
    assert!(!enabled_events(&sc, &s1).iter().any(|e| e.thread().is_none()));
}

#[test]
fn arithmetic_wraps_at_the_word_width() {
    let sc = parse("width 8\nglobal x = 255 @10\nthread t1:\n  load r1, x\n  addi r1, r1, 1\n  store x, r1\n  halt\n")
        .unwrap();
    let mut s = initial_state(&sc);
    drive(&sc, &mut s, 0, 100);
    assert_eq!(s.word(Address(10)), Word(0));
}

#[test]
fn hash_ignores_event_count_and_is_confluent() {
    let text =
        "global a = 0 @10\nglobal b = 0 @11\nthread t1:\n  store a, 1\n  halt\nthread t2:\n  store b, 2\n  halt\n";
    let sc = parse(text).unwrap();
    let mut left = initial_state(&sc);
    drive(&sc, &mut left, 0, 100);
    drive(&sc, &mut left, 1, 100);
    let mut right = initial_state(&sc);
    drive(&sc, &mut right, 1, 100);
    drive(&sc, &mut right, 0, 100);
    assert_eq!(left, right);
    assert_eq!(state_hash(&left), state_hash(&right));
    let mut bumped = left.clone();
    bumped.event_count += 7;
    assert_eq!(state_hash(&bumped), state_hash(&left));
}

#[test]
fn hash_separates_one_word_variations() {
    let sc = builtin("spinlock-increment").unwrap();
    let base = initial_state(&sc);
    let mut seen: HashMap<u64, MachineState> = HashMap::new();
    for addr in 0..100u32 {
        for value in 0..1000u64 {
            let mut s = base.clone();
            if value == 0 {
                s.memory.remove(&Address(addr));
            } else {
                s.memory.insert(Address(addr), Word(value));
            }
            if let Some(prev) = seen.insert(state_hash(&s), s.clone()) {
                assert_eq!(prev, s, "hash collision at word {addr} = {value}");
            }
        }
    }
    // 10^5 variations, minus the 99 duplicates of the all-zero memory.
    assert_eq!(seen.len(), 100 * 999 + 1);
}

#[test]
fn locals_resolve_per_frame() {
    let sc = builtin("recursive-f").unwrap();
    let t = ThreadId(0);
    let s0 = initial_state(&sc);
    assert_eq!(resolve_addr(&sc, t, "n", &s0), Err(ResolveError::NoActiveFrame("n".into())));
    assert_eq!(resolve_addr(&sc, t, "nope", &s0), Err(ResolveError::UnknownVariable("nope".into())));

    let mut s = s0.clone();
    let mut addrs = Vec::new();
    while let Some(e) = enabled_events(&sc, &s).first().copied() {
        s = step(&sc, &s, &e).unwrap();
        if e.micro_kind() == Some(MicroKind::CallEnter) {
            addrs.push(resolve_addr(&sc, t, "n", &s).unwrap());
        }
    }
    assert_eq!(addrs.len(), 2);
    assert_ne!(addrs[0], addrs[1]);
    let (lo, hi) = sc.stack_region(t);
    assert!(addrs.iter().all(|a| *a >= lo && *a < hi));
}

#[test]
fn globals_resolve_to_fixed_addresses() {
    let sc = builtin("spinlock-increment").unwrap();
    let seq = common::random_walk(&sc, &mut common::rng(9), 30);
    for s in run(&sc, &seq).unwrap().states() {
        assert_eq!(resolve_addr(&sc, ThreadId(1), "x", s), Ok(Address(100)));
    }
}

/// A buggy step function that also bumps an unrelated word is caught both by
/// the trace predicate and by the incremental monitor.
#[test]
fn corrupted_step_is_caught() {
    let sc = builtin("lost-update").unwrap();
    let seq = common::random_walk(&sc, &mut common::rng(4), 5);
    let good = run(&sc, &seq).unwrap();
    let mut states = good.states().to_vec();
    for s in states.iter_mut().skip(3) {
        s.memory.insert(Address(7), Word(42));
    }
    let bad = Trace::from_parts(&sc, seq.clone(), states.clone());
    let found = check_memory_change(&bad);
    assert_eq!(found.len(), 1);
    assert_eq!(found[0].index, 3);
    assert!(check_memory_change(&good).is_empty());

    let suite = Suite::new(&sc, &MonitorSet::all());
    let (mut st, _) = suite.start(&states[0]);
    let mut flagged = Vec::new();
    for (i, e) in seq.iter().enumerate() {
        let f = suite.advance(&mut st, &states[i], e, &states[i + 1]);
        if f.violations.iter().any(|v| v.monitor == MonitorKind::MemoryChange) {
            flagged.push(i + 1);
        }
    }
    assert_eq!(flagged, [3]);
    assert!(replay(&sc, &seq, &MonitorSet::all()).unwrap().is_clean());
}
