//! `old = *ptr; *ptr = m*m + *ptr; return old`, checked against its
//! square-add contract, first alone and then with a device scribbling on the
//! callee's stack frame.

use weaver::explorer::{explore, ExploreConfig};
use weaver::program::calculate_source;
use weaver::specmon::{MonitorSet, OBS_CALL_INTERFERED};
use weaver::{builtin, parse};

fn main() {
    for (m, init) in [(3, 4), (0, 7), (65535, 1)] {
        let scenario = parse(&calculate_source(m, init)).expect("generated source parses");
        let report = explore(&scenario, &ExploreConfig::exhaustive(200), &MonitorSet::all()).expect("valid config");
        let value = report.terminal_values(&scenario, "value");
        println!("m={m} init={init}: final value {value:?}, clean: {}", report.is_clean());
    }

    let clobber = builtin("device-clobber").expect("builtin");
    let report = explore(&clobber, &ExploreConfig::exhaustive(200), &MonitorSet::all()).expect("valid config");
    for o in report.observations_of(OBS_CALL_INTERFERED) {
        println!("device-clobber: {} ({} witness events)", o.message, o.witness.len());
    }
}
