//! Gateway well-usedness (`G`) and ownership (`Owns`) recursions.

use serde::{Deserialize, Serialize};

use super::observe::{acs_operands, write_effect};
use crate::machine::{AgentId, Event, MachineState, ThreadId, Word};
use crate::program::{Activation, Gateway, MicroKind, Scenario};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GatewayViolationKind {
    /// Zero written while the gateway already held 0.
    DoubleRelease,
    /// Any other write that breaks the protocol.
    Misuse,
}

impl GatewayViolationKind {
    pub fn name(self) -> &'static str {
        match self {
            GatewayViolationKind::DoubleRelease => "double-release",
            GatewayViolationKind::Misuse => "gateway-misuse",
        }
    }
}

/// One gateway's `G` bit and per-thread `Owns` bits.
///
/// `G(λ) = 0`. An at-start activation lets `G` rise to 1 once, on the first
/// step where the gateway holds 0 and no acs on it was in flight before the
/// step. After `G` falls it stays 0.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GatewayState {
    pub g: bool,
    pending: bool,
    pub owns: Vec<bool>,
}

impl GatewayState {
    pub fn initial(gw: &Gateway, threads: usize) -> Self {
        GatewayState { g: false, pending: gw.activation == Activation::AtStart, owns: vec![false; threads] }
    }

    pub fn owner_count(&self) -> usize {
        self.owns.iter().filter(|&&o| o).count()
    }

    /// Fold one event. Returns the violation when `G` falls from 1 to 0.
    pub fn advance(
        &mut self,
        scenario: &Scenario,
        gw: &Gateway,
        prev: &MachineState,
        event: &Event,
        next: &MachineState,
    ) -> Option<(GatewayViolationKind, String)> {
        let alpha = gw.addr;
        let before = prev.word(alpha);
        let who = |agent: AgentId| match agent {
            AgentId::Thread(t) => format!("thread {}", scenario.threads[t.0].name),
            AgentId::Device(d) => format!("device {}", scenario.devices[d.0].name),
            AgentId::Scheduler => "scheduler".to_string(),
        };

        let fall = write_effect(scenario, prev, event, next).filter(|w| w.addr == alpha).and_then(|w| match w.agent {
            AgentId::Device(_) => Some((
                GatewayViolationKind::Misuse,
                format!("{} wrote {} to gateway {}", who(w.agent), w.value, gw.name),
            )),
            AgentId::Thread(_) if w.value.0 != 0 && !w.via_acs => Some((
                GatewayViolationKind::Misuse,
                format!("{} wrote {} to gateway {} outside an acs", who(w.agent), w.value, gw.name),
            )),
            AgentId::Thread(_) if w.value.0 == 0 && before == Word(0) => Some((
                GatewayViolationKind::DoubleRelease,
                format!("{} released gateway {} which was already released", who(w.agent), gw.name),
            )),
            AgentId::Thread(_) if w.value.0 == 0 && before != Word(1) => Some((
                GatewayViolationKind::Misuse,
                format!("{} wrote 0 to gateway {} while it held {}", who(w.agent), gw.name, before),
            )),
            _ => None,
        });

        let was = self.g;
        if fall.is_some() {
            self.g = false;
        } else if !self.g && self.pending {
            let acs_in_flight = prev.threads.iter().any(|c| c.reservation.is_some_and(|r| r.addr == alpha));
            if next.word(alpha) == Word(0) && !acs_in_flight {
                self.g = true;
                self.pending = false;
            }
        }

        if !self.g || next.word(alpha) == Word(0) {
            self.owns.iter_mut().for_each(|o| *o = false);
        } else if let (Some(t), Some(MicroKind::AcsCommit)) = (event.thread(), event.micro_kind()) {
            if let Some(ops) = acs_operands(scenario, prev, t) {
                let won = next.thread(t).reg(ops.rd) == Word(1);
                if ops.target == alpha && ops.old == Word(0) && ops.new == Word(1) && won {
                    self.owns[t.0] = true;
                }
            }
        }

        if was {
            fall
        } else {
            None
        }
    }
}

/// State-level mutual exclusion checks for one state:
///
/// * at most one owner per gateway;
/// * while `G = 1`, some thread owns the gateway iff it holds 1;
/// * every thread positioned on a critical line owns that line's gateway;
/// * at most one thread is inside each gateway's critical lines.
pub fn mutex_violations(scenario: &Scenario, state: &MachineState, gateways: &[GatewayState]) -> Vec<String> {
    let mut out = Vec::new();
    for (gw, gs) in scenario.gateways.iter().zip(gateways) {
        if gs.owner_count() > 1 {
            let owners: Vec<&str> = gs
                .owns
                .iter()
                .enumerate()
                .filter(|(_, &o)| o)
                .map(|(i, _)| scenario.threads[i].name.as_str())
                .collect();
            out.push(format!("gateway {} owned by {} threads at once ({})", gw.name, owners.len(), owners.join(", ")));
        }
        if gs.g && (gs.owner_count() > 0) != (state.word(gw.addr) == Word(1)) {
            out.push(format!(
                "gateway {}: {} owner(s) but contents {}",
                gw.name,
                gs.owner_count(),
                state.word(gw.addr)
            ));
        }
    }

    let mut inside: Vec<(Option<&str>, &str)> = Vec::new();
    for (i, spec) in scenario.threads.iter().enumerate() {
        let ctx = state.thread(ThreadId(i));
        if ctx.status.is_finished() {
            continue;
        }
        let Some(guard) = spec.program.critical.get(&ctx.pc) else { continue };
        let line = spec.program.instructions[ctx.pc].line;
        match guard {
            Some(name) => {
                let owned = scenario.gateways.iter().position(|g| &g.name == name).is_some_and(|k| gateways[k].owns[i]);
                if !owned {
                    out.push(format!("thread {} on critical line {line} without owning {name}", spec.name));
                }
            }
            None => out.push(format!("thread {} on unguarded critical line {line}", spec.name)),
        }
        inside.push((guard.as_deref(), spec.name.as_str()));
    }
    let mut guards: Vec<Option<&str>> = inside.iter().map(|(g, _)| *g).collect();
    guards.sort();
    guards.dedup();
    for g in guards {
        let names: Vec<&str> = inside.iter().filter(|(x, _)| *x == g).map(|(_, n)| *n).collect();
        if names.len() > 1 {
            out.push(format!(
                "threads {} inside the critical region of {} together",
                names.join(", "),
                g.unwrap_or("<unguarded>")
            ));
        }
    }
    out
}
