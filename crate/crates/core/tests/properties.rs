mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use weaver::explorer::{explore, replay, ExploreConfig};
use weaver::machine::{enabled_events, initial_state, run, state_hash, step, MachineState};
use weaver::program::{builtin, builtin_names, parse, parse_bytes, render, Scenario};
use weaver::specmon::{
    check_acs, check_increment, check_memory_change, check_mutex, extract_acs, extract_increments, gateway_timeline,
    MonitorKind, MonitorSet,
};

/// Independent count of maximal sequences: leaves of the enabled-event tree
/// cut at `max` events.
fn count_leaves(sc: &Scenario, s: &MachineState, depth: usize, max: usize) -> usize {
    let events = enabled_events(sc, s);
    if events.is_empty() || depth == max {
        return 1;
    }
    events.iter().map(|e| count_leaves(sc, &step(sc, s, e).unwrap(), depth + 1, max)).sum()
}

fn dsl_soup() -> impl Strategy<Value = String> {
    let word = prop_oneof![
        Just("thread"),
        Just("t1"),
        Just(":"),
        Just("global"),
        Just("x"),
        Just("="),
        Just("@"),
        Just("gateway"),
        Just("active"),
        Just("device"),
        Just("writes"),
        Just("to"),
        Just("budget"),
        Just("critical"),
        Just("{"),
        Just("}"),
        Just("load"),
        Just("store"),
        Just("acs"),
        Just("r1"),
        Just(","),
        Just("0x1f"),
        Just("-3"),
        Just("99999999999999999999"),
        Just("func"),
        Just("local"),
        Just("call"),
        Just("ret"),
        Just("\n"),
        Just("["),
        Just("]"),
        Just("=="),
        Just("when"),
        Just("contract"),
        Just("square-add"),
        Just("halt"),
    ];
    prop::collection::vec(word, 0..40).prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn parser_is_total_on_bytes(bytes in prop::collection::vec(any::<u8>(), 0..300)) {
        let _ = parse_bytes(&bytes);
    }

    #[test]
    fn parser_is_total_on_token_soup(text in dsl_soup()) {
        if let Err(e) = parse(&text) {
            prop_assert!(e.line() as usize <= text.lines().count().max(1));
        }
    }

    #[test]
    fn render_round_trips(text in common::small_scenario()) {
        let s = parse(&text).unwrap();
        let again = parse(&render(&s)).unwrap();
        prop_assert_eq!(again.without_lines(), s.without_lines());
    }

    #[test]
    fn runs_are_deterministic(text in common::small_scenario(), seed in any::<u64>()) {
        let sc = parse(&text).unwrap();
        let seq = common::random_walk(&sc, &mut common::rng(seed), 30);
        let (a, b) = (run(&sc, &seq).unwrap(), run(&sc, &seq).unwrap());
        prop_assert_eq!(a.states(), b.states());
        for k in 0..=seq.len() {
            let prefix = run(&sc, &seq.prefix(k)).unwrap();
            prop_assert_eq!(prefix.final_state(), a.state_at(k).unwrap());
        }
    }

    #[test]
    fn dedup_preserves_verdicts(text in common::small_scenario()) {
        let sc = parse(&text).unwrap();
        prop_assume!(common::micro_event_total(&sc) <= 14);
        let base = ExploreConfig::exhaustive(40);
        let on = explore(&sc, &base, &MonitorSet::all()).unwrap();
        let off = explore(&sc, &base.clone().with_dedup(false), &MonitorSet::all()).unwrap();
        prop_assert_eq!(on.violation_set(), off.violation_set());
        let hashes = |r: &weaver::explorer::ExploreReport| r.terminal_states.iter().map(|t| t.hash).collect::<BTreeSet<_>>();
        prop_assert_eq!(hashes(&on), hashes(&off));
    }

}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn exhaustive_coverage_matches_enumeration(text in common::small_scenario()) {
        let sc = parse(&text).unwrap();
        prop_assume!(common::micro_event_total(&sc) <= 12);
        let report = explore(&sc, &ExploreConfig::exhaustive(30).with_dedup(false), &MonitorSet::all()).unwrap();
        prop_assert_eq!(report.sequences_explored, count_leaves(&sc, &initial_state(&sc), 0, 30));
    }

    #[test]
    fn scheduler_keeps_threads_on_one_core(text in common::scheduled_scenario()) {
        let sc = parse(&text).unwrap();
        let report = explore(&sc, &ExploreConfig::exhaustive(10).with_dedup(false), &MonitorSet::all()).unwrap();
        prop_assert!(report.sequences_explored == count_leaves(&sc, &initial_state(&sc), 0, 10));
        prop_assert!(!report.violations.iter().any(|c| c.monitor == MonitorKind::Active), "{:?}", report.violations);
    }

}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn incremental_monitors_agree_with_trace_predicates(text in common::small_scenario(), seed in any::<u64>()) {
        let sc = parse(&text).unwrap();
        let seq = common::random_walk(&sc, &mut common::rng(seed), 40);
        let trace = run(&sc, &seq).unwrap();
        let verdict = replay(&sc, &seq, &MonitorSet::all()).unwrap();
        let flagged = |k: MonitorKind| verdict.violations.iter().any(|(_, v)| v.monitor == k);

        let recs = extract_acs(&trace);
        let acs_bad = recs.iter().any(|r| !check_acs(&trace, r, &recs).unwrap());
        prop_assert_eq!(flagged(MonitorKind::Acs), acs_bad);
        let inc_bad = extract_increments(&trace).iter().any(|r| !check_increment(&trace, r).unwrap());
        prop_assert_eq!(flagged(MonitorKind::Increment), inc_bad);
        prop_assert_eq!(flagged(MonitorKind::MemoryChange), !check_memory_change(&trace).is_empty());
    }
}

/// Threads mixing legal and illegal gateway traffic with critical regions.
fn protocol_scenario() -> impl Strategy<Value = String> {
    let line = prop_oneof![
        3 => Just("acs r0, g, 0, 1".to_string()),
        2 => Just("store g, 0".to_string()),
        1 => Just("store g, 1".to_string()),
        2 => Just("critical {\n  load r1, x\n  addi r1, r1, 1\n  store x, r1\n  }".to_string()),
        1 => Just("nop".to_string()),
    ];
    (prop::collection::vec(prop::collection::vec(line, 1..4), 2..3), any::<bool>()).prop_map(|(bodies, device)| {
        let mut s = String::from("global x = 0 @100\ngateway g @64 active\n");
        if device {
            s.push_str("device d writes 0, 1 to g budget 1\n");
        }
        for (i, b) in bodies.iter().enumerate() {
            s.push_str(&format!("thread t{i}:\n{}\n  halt\n", b.join("\n")));
        }
        s
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn gateway_and_mutex_monitors_agree(text in protocol_scenario(), seed in any::<u64>()) {
        let sc = parse(&text).unwrap();
        let seq = common::random_walk(&sc, &mut common::rng(seed), 40);
        let trace = run(&sc, &seq).unwrap();
        let verdict = replay(&sc, &seq, &MonitorSet::all()).unwrap();
        let at = |k: MonitorKind| verdict.violations.iter().filter(|(_, v)| v.monitor == k).map(|(i, _)| *i).collect::<BTreeSet<_>>();

        let (states, falls) = gateway_timeline(&trace, 0);
        prop_assert_eq!(at(MonitorKind::Gateway), falls.iter().map(|(i, _, _)| *i).collect::<BTreeSet<_>>());
        prop_assert_eq!(at(MonitorKind::Mutex), check_mutex(&trace).iter().map(|(i, _)| *i).collect::<BTreeSet<_>>());
        for (i, g) in states.iter().enumerate() {
            prop_assert_eq!(g, &verdict.monitor_states[i].gateways()[0]);
        }
    }
}

#[test]
fn builtins_round_trip_through_render() {
    for name in builtin_names() {
        let s = builtin(name).unwrap();
        let again = parse(&render(&s)).unwrap();
        assert_eq!(again.without_lines(), s.without_lines(), "{name}");
    }
}

#[test]
fn counterexamples_certify_themselves() {
    for text in [common::LOST_UPDATE_MARKED, common::BENIGN_RELEASE_GATEWAY] {
        let sc = parse(text).unwrap();
        let report = explore(&sc, &ExploreConfig::exhaustive(40), &MonitorSet::all()).unwrap();
        assert!(!report.violations.is_empty());
        for c in &report.violations {
            let verdict = replay(&sc, &c.sequence, &MonitorSet::all()).unwrap();
            assert_eq!(verdict.index_of(&c.violation()), Some(c.index), "{c:?}");
        }
    }
}

#[test]
fn hashes_stable_across_prefix_runs() {
    let sc = builtin("spinlock-increment").unwrap();
    let seq = common::random_walk(&sc, &mut common::rng(1), 50);
    let trace = run(&sc, &seq).unwrap();
    let split = seq.len() / 2;
    let head = run(&sc, &seq.prefix(split)).unwrap();
    assert_eq!(state_hash(head.final_state()), state_hash(trace.state_at(split).unwrap()));
}
