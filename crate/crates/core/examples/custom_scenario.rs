//! Scenarios written in the text DSL: two threads on one core with
//! preemption, a counter guarded by a spinlock, replayed event by event.

use weaver::explorer::{explore, replay, ExploreConfig};
use weaver::specmon::MonitorSet;
use weaver::{enabled_events, initial_state, parse, step, EventSeq};

const SOURCE: &str = "
scenario one-core
cores 1
preempt
global count = 0 @100
gateway lock @64 active

thread a:
  spin: acs r0, lock, 0, 1
        beqz r0, spin
  critical lock {
        load r1, count
        addi r1, r1, 1
        store count, r1
  }
        store lock, 0
        halt

thread b:
  spin: acs r0, lock, 0, 1
        beqz r0, spin
  critical lock {
        load r1, count
        addi r1, r1, 1
        store count, r1
  }
        store lock, 0
        halt
";

fn main() {
    let scenario = parse(SOURCE).expect("scenario parses");
    let report = explore(&scenario, &ExploreConfig::exhaustive(40), &MonitorSet::all()).expect("valid config");
    println!("states {}, truncated {}, clean {}", report.states_visited, report.truncated, report.is_clean());
    println!("final count: {:?}", report.terminal_values(&scenario, "count"));

    // Drive the machine by hand: always take the first enabled event.
    let mut state = initial_state(&scenario);
    let mut seq = EventSeq::new();
    while let Some(e) = enabled_events(&scenario, &state).first().copied() {
        state = step(&scenario, &state, &e).unwrap();
        seq.push(e);
    }
    let verdict = replay(&scenario, &seq, &MonitorSet::all()).unwrap();
    println!("first-choice run: {} events, clean {}", seq.len(), verdict.is_clean());
}
