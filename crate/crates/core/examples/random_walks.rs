//! Seeded random walks for scenarios too large to enumerate. The same seed
//! always yields the same report.

use weaver::builtin;
use weaver::explorer::{explore, ExploreConfig};
use weaver::specmon::MonitorSet;

fn main() {
    let scenario = builtin("spinlock-increment").expect("builtin");
    let config = ExploreConfig::random(42, 1000, 80).with_workers(4);
    let a = explore(&scenario, &config, &MonitorSet::all()).expect("valid config");
    let b = explore(&scenario, &config, &MonitorSet::all()).expect("valid config");
    println!("{} walks, {} distinct terminal states", a.sequences_explored, a.terminal_states.len());
    println!("final x: {:?}", a.terminal_values(&scenario, "x"));
    println!("reproducible: {}", serde_json::to_string(&a).unwrap() == serde_json::to_string(&b).unwrap());
}
