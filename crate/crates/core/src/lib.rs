//! Deterministic event-sequence simulation of shared-memory concurrent
//! programs, with trace monitors for memory, compare-and-swap, gateway
//! (spinlock) ownership and call-depth properties.
//!
//! Every machine state is a pure function of the scenario and the event
//! sequence that drove it there. The [`explorer`] enumerates those sequences
//! (exhaustively or by seeded random walks) and folds the [`specmon`] monitors
//! along every explored edge, producing replayable counterexamples.
//!
//! ```
//! use weaver::explorer::{explore, ExploreConfig};
//! use weaver::program::builtin;
//! use weaver::specmon::MonitorSet;
//!
//! let scenario = builtin("lost-update").unwrap();
//! let report = explore(&scenario, &ExploreConfig::exhaustive(200), &MonitorSet::all()).unwrap();
//! let finals = report.terminal_values(&scenario, "x");
//! assert_eq!(finals.keys().copied().collect::<Vec<_>>(), vec![1, 2]);
//! ```

pub mod cli;
pub mod explorer;
pub mod machine;
pub mod program;
pub mod specmon;

pub use machine::{
    enabled_events, initial_state, run, state_hash, step, Address, AgentId, CoreId, DeviceId, Event, EventSeq,
    MachineError, MachineState, ThreadId, Trace, Word, WordWidth,
};
pub use program::{builtin, parse, Scenario};
