//! Two unsynchronized increments of one word: exhaustive search finds both
//! final values and a witness for the lost update.

use weaver::explorer::{explore, ExploreConfig};
use weaver::specmon::MonitorSet;
use weaver::{builtin, run};

fn main() {
    let scenario = builtin("lost-update").expect("builtin");
    let report = explore(&scenario, &ExploreConfig::exhaustive(60), &MonitorSet::all()).expect("valid config");

    println!("states visited: {}", report.states_visited);
    for (value, states) in report.terminal_values(&scenario, "x") {
        println!("final x = {value} in {states} terminal state(s)");
    }

    let witness = report.terminal_witness(&scenario, "x", 1).expect("x = 1 is reachable");
    println!("an interleaving that loses an update:");
    for (i, e) in witness.iter().enumerate() {
        println!("  {i:>2} {}", weaver::cli::dump::render_event(&scenario, e));
    }
    let x = scenario.global("x").unwrap().addr;
    assert_eq!(run(&scenario, witness).unwrap().final_state().word(x).0, 1);
}
