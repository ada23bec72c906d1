//! Shared helpers for the integration tests.
#![allow(dead_code)]

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weaver::machine::{apply_unchecked, enabled_events, initial_state, EventSeq};
use weaver::program::Scenario;

/// `lost-update` with the read-modify-write marked critical but unguarded.
pub const LOST_UPDATE_MARKED: &str = "\
scenario lost-update-marked
global x = 0 @100
thread t1:
  critical {
        load r1, x
        addi r1, r1, 1
        store x, r1
  }
        halt
thread t2:
  critical {
        load r1, x
        addi r1, r1, 1
        store x, r1
  }
        halt
";

/// `benign-release` with the gate declared as an active gateway, so the
/// release of an already released gate is judged.
pub const BENIGN_RELEASE_GATEWAY: &str = "\
scenario benign-release-gateway
gateway gate @64 active
thread t1:
        acs r0, gate, 0, 1
        halt
thread t2:
        store gate, 0
        halt
";

/// A random walk of at most `len` events, choosing uniformly.
pub fn random_walk(scenario: &Scenario, rng: &mut ChaCha8Rng, len: usize) -> EventSeq {
    let mut state = initial_state(scenario);
    let mut seq = EventSeq::new();
    while seq.len() < len {
        let events = enabled_events(scenario, &state);
        if events.is_empty() {
            break;
        }
        let e = events[rng.gen_range(0..events.len())];
        state = apply_unchecked(scenario, &state, &e);
        seq.push(e);
    }
    seq
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn operand() -> impl Strategy<Value = &'static str> {
    prop_oneof![Just("a"), Just("b")]
}

fn reg() -> impl Strategy<Value = u8> {
    1u8..4
}

/// One random instruction over globals `a`, `b` and registers r1..r3.
pub fn instruction() -> impl Strategy<Value = String> {
    prop_oneof![
        (reg(), operand()).prop_map(|(r, x)| format!("load r{r}, {x}")),
        (operand(), reg()).prop_map(|(x, r)| format!("store {x}, r{r}")),
        (operand(), 0i64..4).prop_map(|(x, v)| format!("store {x}, {v}")),
        (reg(), -2i64..3).prop_map(|(r, v)| format!("addi r{r}, r{r}, {v}")),
        (reg(), 0i64..5).prop_map(|(r, v)| format!("li r{r}, {v}")),
        (reg(), operand(), 0i64..3, 0i64..3).prop_map(|(r, x, o, n)| format!("acs r{r}, {x}, {o}, {n}")),
        Just("nop".to_string()),
    ]
}

/// Store-heavy instruction mix for the write-timing property.
pub fn store_heavy_instruction() -> impl Strategy<Value = String> {
    prop_oneof![
        3 => (operand(), reg()).prop_map(|(x, r)| format!("store {x}, r{r}")),
        2 => (operand(), 1i64..9).prop_map(|(x, v)| format!("store {x}, {v}")),
        2 => (reg(), operand()).prop_map(|(r, x)| format!("load r{r}, {x}")),
        1 => (reg(), 1i64..3).prop_map(|(r, v)| format!("addi r{r}, r{r}, {v}")),
        1 => (reg(), operand(), 0i64..3, 1i64..4).prop_map(|(r, x, o, n)| format!("acs r{r}, {x}, {o}, {n}")),
    ]
}

/// Scenario text with `threads` threads, each running `body` then `halt`,
/// optionally with a device writing to `a`.
pub fn scenario_text(bodies: &[Vec<String>], device: bool, preempt: bool, cores: usize) -> String {
    let mut s = String::from("global a = 0 @10\nglobal b = 1 @11\n");
    s.push_str(&format!("cores {cores}\n"));
    if preempt {
        s.push_str("preempt\n");
    }
    if device {
        s.push_str("device dev writes 2, 5 to a budget 1\n");
    }
    for (i, body) in bodies.iter().enumerate() {
        s.push_str(&format!("thread t{i}:\n"));
        for line in body {
            s.push_str(&format!("  {line}\n"));
        }
        s.push_str("  halt\n");
    }
    s
}

/// Small two- or three-thread scenarios.
pub fn small_scenario() -> impl Strategy<Value = String> {
    (prop::collection::vec(prop::collection::vec(instruction(), 0..3), 2..4), any::<bool>())
        .prop_map(|(bodies, device)| scenario_text(&bodies, device, false, bodies.len()))
}

/// Scenarios that also exercise the scheduler: fewer cores than threads,
/// sometimes preemptive.
pub fn scheduled_scenario() -> impl Strategy<Value = String> {
    (prop::collection::vec(prop::collection::vec(instruction(), 0..2), 2..3), any::<bool>())
        .prop_map(|(bodies, preempt)| scenario_text(&bodies, false, preempt, 1))
}

pub fn store_heavy_scenario() -> impl Strategy<Value = String> {
    (prop::collection::vec(prop::collection::vec(store_heavy_instruction(), 1..5), 2..4), any::<bool>())
        .prop_map(|(bodies, device)| scenario_text(&bodies, device, false, bodies.len()))
}

/// Total micro-events of a scenario's straight-line threads.
pub fn micro_event_total(s: &Scenario) -> usize {
    s.threads.iter().flat_map(|t| &t.program.instructions).map(|i| weaver::program::decompose(i).len()).sum()
}
