//! Two threads race one acs(0 -> 1). In every maximal interleaving exactly
//! one succeeds, and each failure comes with an explanation.

use weaver::explorer::maximal_sequences;
use weaver::specmon::{check_acs, explain_acs_failure, extract_acs};
use weaver::{builtin, run};

fn main() {
    let scenario = builtin("acs-race").expect("builtin");
    let sequences = maximal_sequences(&scenario, 60);
    println!("{} maximal interleavings", sequences.len());
    for seq in sequences.iter().take(3) {
        let trace = run(&scenario, seq).unwrap();
        let records = extract_acs(&trace);
        for r in &records {
            let name = &scenario.threads[r.thread.0].name;
            let ok = check_acs(&trace, r, &records).unwrap();
            println!("  {name}: R={} over [{}, {}], contract holds: {ok}", r.result, r.start, r.end);
            if r.result.0 == 0 {
                println!("    because {:?}", explain_acs_failure(&trace, r).unwrap());
            }
        }
    }
}
