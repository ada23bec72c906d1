use std::ops::Deref;

use serde::{Deserialize, Serialize};

use super::{Event, MachineState};
use crate::program::Scenario;

/// A finite event sequence. The empty sequence denotes the initial state.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventSeq(Vec<Event>);

impl EventSeq {
    pub fn new() -> Self {
        EventSeq(Vec::new())
    }

    pub fn push(&mut self, e: Event) {
        self.0.push(e);
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.0.pop()
    }

    /// `self ≤ other`: self is an initial segment of other.
    pub fn is_prefix_of(&self, other: &EventSeq) -> bool {
        other.0.starts_with(&self.0)
    }

    /// `self < other`: a prefix that is strictly shorter.
    pub fn is_proper_prefix_of(&self, other: &EventSeq) -> bool {
        self.len() < other.len() && self.is_prefix_of(other)
    }

    pub fn prefix(&self, len: usize) -> EventSeq {
        EventSeq(self.0[..len].to_vec())
    }

    pub fn concat(&self, tail: &EventSeq) -> EventSeq {
        let mut v = self.0.clone();
        v.extend_from_slice(&tail.0);
        EventSeq(v)
    }

    pub fn into_vec(self) -> Vec<Event> {
        self.0
    }
}

impl Deref for EventSeq {
    type Target = [Event];

    fn deref(&self) -> &[Event] {
        &self.0
    }
}

impl From<Vec<Event>> for EventSeq {
    fn from(v: Vec<Event>) -> Self {
        EventSeq(v)
    }
}

impl FromIterator<Event> for EventSeq {
    fn from_iter<I: IntoIterator<Item = Event>>(iter: I) -> Self {
        EventSeq(iter.into_iter().collect())
    }
}

/// An event sequence together with the state at every prefix index:
/// `state_at(0)` is the initial state and `state_at(i + 1)` is the state after
/// `events[i]`.
#[derive(Clone, Debug)]
pub struct Trace<'a> {
    scenario: &'a Scenario,
    events: EventSeq,
    states: Vec<MachineState>,
}

impl<'a> Trace<'a> {
    /// Assemble a trace from explicit parts without re-executing. Used by
    /// [`super::run`] and by tests that forge traces to exercise monitors.
    pub fn from_parts(scenario: &'a Scenario, events: EventSeq, states: Vec<MachineState>) -> Self {
        assert_eq!(states.len(), events.len() + 1, "one state per prefix");
        Trace { scenario, events, states }
    }

    pub fn scenario(&self) -> &'a Scenario {
        self.scenario
    }

    pub fn events(&self) -> &EventSeq {
        &self.events
    }

    /// Number of events; valid state indices are `0..=len()`.
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn state_at(&self, i: usize) -> Option<&MachineState> {
        self.states.get(i)
    }

    pub fn states(&self) -> &[MachineState] {
        &self.states
    }

    pub fn final_state(&self) -> &MachineState {
        self.states.last().expect("trace has at least the initial state")
    }
}
