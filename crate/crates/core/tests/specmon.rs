mod common;

use weaver::explorer::maximal_sequences;
use weaver::machine::{enabled_events, initial_state, run, step, Address, Event, EventSeq, ThreadId, Word};
use weaver::program::{builtin, parse, MicroKind};
use weaver::specmon::{
    call_records, check_acs, check_increment, check_mutex, extract_acs, extract_increments, fdepth_profile,
    gateway_timeline, GatewayViolationKind, IncrementRecord, SpecmonError,
};

/// Append up to `n` events of thread `t`, stopping early when it has none.
fn take(sc: &weaver::Scenario, seq: &mut EventSeq, t: usize, n: usize) {
    let mut s = run(sc, seq).unwrap().final_state().clone();
    for _ in 0..n {
        let Some(e) = enabled_events(sc, &s).into_iter().find(|e| e.thread() == Some(ThreadId(t))) else { return };
        s = step(sc, &s, &e).unwrap();
        seq.push(e);
    }
}

#[test]
fn each_spin_iteration_is_an_acs_record() {
    let sc = builtin("spinlock-increment").unwrap();
    let mut seq = EventSeq::new();
    take(&sc, &mut seq, 1, 3); // t2 wins the gate
    take(&sc, &mut seq, 0, 12); // t1 spins three times
    let trace = run(&sc, &seq).unwrap();
    let recs = extract_acs(&trace);
    let mine: Vec<_> = recs.iter().filter(|r| r.thread == ThreadId(0)).collect();
    assert_eq!(mine.len(), 3);
    assert!(mine.iter().all(|r| r.result == Word(0)));
    assert!(recs.iter().all(|r| check_acs(&trace, r, &recs).unwrap()));
    let winner = recs.iter().find(|r| r.thread == ThreadId(1)).unwrap();
    assert_eq!((winner.start, winner.end, winner.result), (1, 3, Word(1)));
}

#[test]
fn unguarded_critical_sections_break_mutex() {
    let plain = builtin("lost-update").unwrap();
    assert!(check_mutex(&run(&plain, &EventSeq::new()).unwrap()).is_empty());
    // Sitting on an unguarded critical line is already a finding at index 0.
    let sc = parse(common::LOST_UPDATE_MARKED).unwrap();
    let seq: EventSeq = vec![Event::micro(0, MicroKind::Issue), Event::micro(1, MicroKind::Issue)].into();
    let found = check_mutex(&run(&sc, &seq).unwrap());
    assert!(found.iter().any(|(i, m)| *i == 0 && m.contains("unguarded critical line")));
    assert!(found.iter().any(|(_, m)| m.contains("together")));
}

#[test]
fn gateway_rises_then_is_owned() {
    let sc = builtin("acs-race").unwrap();
    let mut seq = EventSeq::new();
    take(&sc, &mut seq, 0, 3);
    let trace = run(&sc, &seq).unwrap();
    let (states, falls) = gateway_timeline(&trace, 0);
    assert!(falls.is_empty());
    assert!(!states[0].g);
    assert!(states[1].g);
    assert_eq!(states[3].owns, [true, false]);
    assert_eq!(states[2].owner_count(), 0);
}

#[test]
fn double_release_drops_g() {
    let sc = parse(common::BENIGN_RELEASE_GATEWAY).unwrap();
    let mut seq = EventSeq::new();
    take(&sc, &mut seq, 1, 2);
    let trace = run(&sc, &seq).unwrap();
    let (states, falls) = gateway_timeline(&trace, 0);
    assert_eq!(falls.len(), 1);
    assert_eq!((falls[0].0, falls[0].1), (2, GatewayViolationKind::DoubleRelease));
    assert!(states[1].g && !states[2].g);
}

/// Independent `G` for the benign-release scenario: rises at the first index
/// where the gate holds 0 and no acs was in flight one state earlier; falls
/// for good when t2's release commits onto a gate already at 0.
fn g_oracle(trace: &weaver::Trace<'_>, gate: Address) -> Vec<bool> {
    let mut out = vec![false];
    let (mut g, mut armed) = (false, true);
    for (i, e) in trace.events().iter().enumerate() {
        let (prev, next) = (&trace.states()[i], &trace.states()[i + 1]);
        let release = *e == Event::micro(1, MicroKind::CommitWrite);
        if g && release && prev.word(gate) == Word(0) {
            g = false;
        } else if !g && armed && next.word(gate) == Word(0) && prev.threads.iter().all(|t| t.reservation.is_none()) {
            g = true;
            armed = false;
        }
        out.push(g);
    }
    out
}

#[test]
fn g_matches_oracle_on_every_maximal_sequence() {
    let sc = parse(common::BENIGN_RELEASE_GATEWAY).unwrap();
    let gate = sc.gateway("gate").unwrap().addr;
    let seqs = maximal_sequences(&sc, 40);
    assert!(seqs.len() > 10);
    for seq in &seqs {
        let trace = run(&sc, seq).unwrap();
        let got: Vec<bool> = gateway_timeline(&trace, 0).0.iter().map(|g| g.g).collect();
        assert_eq!(got, g_oracle(&trace, gate), "{seq:?}");
    }
}

#[test]
fn truncated_recursion_leaves_a_call_open() {
    let sc = builtin("recursive-f").unwrap();
    let mut seq = EventSeq::new();
    let mut s = initial_state(&sc);
    let mut enters = 0;
    while enters < 2 {
        let e = enabled_events(&sc, &s)[0];
        s = step(&sc, &s, &e).unwrap();
        seq.push(e);
        enters += usize::from(e.micro_kind() == Some(MicroKind::CallEnter));
    }
    let trace = run(&sc, &seq).unwrap();
    let f = sc.threads[0].program.function_named("f").unwrap();
    let calls = call_records(&trace, ThreadId(0), f);
    assert_eq!(calls.len(), 2);
    assert!(calls.iter().all(|c| c.end.is_none()));
    assert_eq!(*fdepth_profile(&trace, ThreadId(0), f).last().unwrap(), 2);
}

#[test]
fn lost_update_interleaving_satisfies_each_increment() {
    let sc = builtin("lost-update").unwrap();
    let mut seq = EventSeq::new();
    take(&sc, &mut seq, 0, 2);
    take(&sc, &mut seq, 1, 2);
    take(&sc, &mut seq, 0, 10);
    take(&sc, &mut seq, 1, 10);
    let trace = run(&sc, &seq).unwrap();
    assert_eq!(trace.final_state().word(Address(100)), Word(1));
    let recs = extract_increments(&trace);
    assert_eq!(recs.len(), 2);
    for r in &recs {
        assert!(check_increment(&trace, r).unwrap(), "{r:?}");
    }
}

#[test]
fn malformed_records_are_errors() {
    let sc = builtin("lost-update").unwrap();
    let trace = run(&sc, &EventSeq::new()).unwrap();
    let backwards = IncrementRecord { thread: ThreadId(0), addr: Address(100), start: 3, end: 1 };
    assert!(matches!(check_increment(&trace, &backwards), Err(SpecmonError::MalformedRecord(_))));
    let beyond = IncrementRecord { end: 9, start: 0, ..backwards };
    assert!(matches!(check_increment(&trace, &beyond), Err(SpecmonError::IndexOutOfRange { index: _, len: 0 })));
}
