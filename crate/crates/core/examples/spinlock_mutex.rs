//! The same increments behind an acs spinlock. Every reachable state is
//! checked for single ownership of the gateway, and only x = 2 survives.

use std::sync::atomic::{AtomicUsize, Ordering};

use weaver::builtin;
use weaver::explorer::{explore_with, ExploreConfig};
use weaver::specmon::{MonitorSet, SuiteState};
use weaver::MachineState;

fn main() {
    let scenario = builtin("spinlock-increment").expect("builtin");
    let max_owners = AtomicUsize::new(0);
    let observer = |_: &MachineState, m: &SuiteState| {
        max_owners.fetch_max(m.gateways()[0].owner_count(), Ordering::Relaxed);
    };
    let config = ExploreConfig::exhaustive(60).with_workers(4);
    let report = explore_with(&scenario, &config, &MonitorSet::all(), Some(&observer)).expect("valid config");

    println!("states visited: {}, truncated: {}", report.states_visited, report.truncated);
    println!("final x: {:?}", report.terminal_values(&scenario, "x"));
    println!("most owners seen at once: {}", max_owners.load(Ordering::Relaxed));
    println!("violations: {}", report.violations.len());
}
