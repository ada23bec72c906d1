//! Call depth of a recursive function over one run, and its call records.

use weaver::explorer::maximal_sequences;
use weaver::machine::ThreadId;
use weaver::specmon::{call_records, fdepth_profile};
use weaver::{builtin, run};

fn main() {
    let scenario = builtin("recursive-f").expect("builtin");
    let seq = &maximal_sequences(&scenario, 100)[0];
    let trace = run(&scenario, seq).unwrap();
    let f = scenario.threads[0].program.function_named("f").unwrap();

    let mut profile = fdepth_profile(&trace, ThreadId(0), f);
    profile.dedup();
    println!("depth changes: {profile:?}");
    for call in call_records(&trace, ThreadId(0), f) {
        println!("call of f over [{}, {:?}]", call.start, call.end);
    }
}
