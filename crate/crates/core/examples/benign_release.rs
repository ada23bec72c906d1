//! A release racing an acquire on a plain global can fail the acs without
//! the word ever differing from `old`: the explorer reports it as an
//! observation with a witness, not as a violation.

use weaver::builtin;
use weaver::explorer::{explore, ExploreConfig};
use weaver::specmon::{MonitorSet, OBS_ACS_BENIGN_FAILURE};

fn main() {
    let scenario = builtin("benign-release").expect("builtin");
    let report = explore(&scenario, &ExploreConfig::exhaustive(40), &MonitorSet::all()).expect("valid config");
    println!("clean: {}", report.is_clean());
    for o in report.observations_of(OBS_ACS_BENIGN_FAILURE) {
        println!("{} (seen {} times)", o.message, o.count);
        for (i, e) in o.witness.iter().enumerate() {
            println!("  {i:>2} {}", weaver::cli::dump::render_event(&scenario, e));
        }
    }
}
