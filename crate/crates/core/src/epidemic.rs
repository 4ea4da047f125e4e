//! Synchronous-round push gossip with duplicate suppression.
//!
//! Devices infected before a round starts each push to up to `fanout`
//! susceptible neighbors chosen uniformly at random. A device learns of
//! infections as they happen (neighbor state rides on prior messages), so no
//! device is ever pushed to twice and every transmission infects exactly one
//! device. Neighbors that already hold the version through some other path are
//! absorbed as carriers without a message.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::ids::{DeviceId, ItemId};
use crate::sim::{AdHocTopology, Clique};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum InterestFilter {
    /// Every device may be infected and relay, interested or not.
    #[default]
    All,
    /// Only the listed devices are pushed to.
    Only(BTreeSet<DeviceId>),
}

impl InterestFilter {
    pub fn admits(&self, d: DeviceId) -> bool {
        match self {
            InterestFilter::All => true,
            InterestFilter::Only(s) => s.contains(&d),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Infection {
    pub at: SimTime,
    /// The pushing neighbor; `None` for the source and absorbed carriers.
    pub by: Option<DeviceId>,
}

/// Progress of one (item, version) epidemic.
#[derive(Debug, Clone, PartialEq)]
pub struct InfectionState {
    pub item: ItemId,
    pub version: u64,
    pub source: DeviceId,
    infected: BTreeMap<DeviceId, Infection>,
    pub rounds: u32,
    pub messages: usize,
    pub complete: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoundOutcome {
    /// `(sender, receiver)` pairs, one ad-hoc message each.
    pub transmissions: Vec<(DeviceId, DeviceId)>,
    pub absorbed: Vec<DeviceId>,
}

impl InfectionState {
    /// Seeds an epidemic at `source`, which must already hold the version.
    pub fn start(
        source: DeviceId,
        item: ItemId,
        version: u64,
        now: SimTime,
        topology: &AdHocTopology,
        filter: &InterestFilter,
    ) -> Self {
        let mut infected = BTreeMap::new();
        infected.insert(source, Infection { at: now, by: None });
        let mut s = InfectionState { item, version, source, infected, rounds: 0, messages: 0, complete: false };
        s.complete = s.at_fixpoint(topology, filter);
        s
    }

    pub fn is_infected(&self, d: DeviceId) -> bool {
        self.infected.contains_key(&d)
    }

    pub fn infected(&self) -> impl Iterator<Item = (&DeviceId, &Infection)> {
        self.infected.iter()
    }

    pub fn infected_set(&self) -> BTreeSet<DeviceId> {
        self.infected.keys().copied().collect()
    }

    pub fn infected_count(&self) -> usize {
        self.infected.len()
    }

    /// Runs one synchronous round. Marks the epidemic complete once no
    /// infected device has an uninfected, admissible neighbor left.
    pub fn gossip_round<R: Rng>(
        &mut self,
        topology: &AdHocTopology,
        fanout: usize,
        filter: &InterestFilter,
        holds: impl Fn(DeviceId) -> bool,
        now: SimTime,
        rng: &mut R,
    ) -> RoundOutcome {
        debug_assert!(fanout >= 1);
        let mut out = RoundOutcome::default();
        if self.complete {
            return out;
        }
        self.rounds += 1;
        let senders: Vec<DeviceId> = self.infected.keys().copied().collect();
        for sender in senders {
            let mut candidates = Vec::new();
            for n in topology.neighbors(sender) {
                if self.infected.contains_key(&n) || !filter.admits(n) {
                    continue;
                }
                if holds(n) {
                    self.infected.insert(n, Infection { at: now, by: None });
                    out.absorbed.push(n);
                } else {
                    candidates.push(n);
                }
            }
            let mut chosen: Vec<DeviceId> = candidates.choose_multiple(rng, fanout).copied().collect();
            chosen.sort();
            for r in chosen {
                self.infected.insert(r, Infection { at: now, by: Some(sender) });
                out.transmissions.push((sender, r));
            }
        }
        self.messages += out.transmissions.len();
        if out.transmissions.is_empty() && out.absorbed.is_empty() {
            self.complete = true;
        } else {
            self.complete = self.at_fixpoint(topology, filter);
        }
        out
    }

    fn at_fixpoint(&self, topology: &AdHocTopology, filter: &InterestFilter) -> bool {
        self.infected
            .keys()
            .all(|&d| topology.neighbors(d).all(|n| self.infected.contains_key(&n) || !filter.admits(n)))
    }
}

/// Fraction of `interested` clique members that are infected; 1 when nobody in
/// the clique is interested.
pub fn infection_coverage(state: &InfectionState, clique: &Clique, interested: &BTreeSet<DeviceId>) -> f64 {
    let targets: Vec<&DeviceId> = clique.members.iter().filter(|m| interested.contains(m)).collect();
    if targets.is_empty() {
        return 1.0;
    }
    let hit = targets.iter().filter(|m| state.is_infected(***m)).count();
    hit as f64 / targets.len() as f64
}
