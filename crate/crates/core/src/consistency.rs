//! Information items, replicas, consistency requirements and the injury
//! trigger that decides when an injection is worth paying for.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ids::{CliqueId, DeviceId, Endpoint, ItemId, ServiceId};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Priority {
    Low,
    #[default]
    Normal,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Never leaves the clique it was produced in.
    CliqueLocal,
    #[default]
    Global,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::CliqueLocal => "clique_local",
            Scope::Global => "global",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyProperties {
    /// Seconds; authority-declared bound, always positive.
    pub max_staleness: f64,
    pub priority: Priority,
    pub scope: Scope,
}

/// One produced version of an item.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationItem {
    pub item_id: ItemId,
    pub service_id: ServiceId,
    pub version: u64,
    pub payload_digest: u64,
    pub origin: Endpoint,
    pub produced_at: SimTime,
    pub properties: ConsistencyProperties,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyRequirement {
    pub seeker: DeviceId,
    pub item: ItemId,
    pub max_tolerated_age: f64,
    pub max_wait: f64,
    pub declared_at: SimTime,
}

/// Preset requirement profiles, stricter for a business traveler than a tourist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Business,
    Tourist,
}

impl Profile {
    /// `(max_tolerated_age, max_wait)` in seconds.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            Profile::Business => (30.0, 5.0),
            Profile::Tourist => (300.0, 60.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderRole {
    pub device: DeviceId,
    pub provided_items: BTreeSet<ItemId>,
    pub delegate_of: Option<DeviceId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeekerRole {
    pub device: DeviceId,
    pub sought_items: BTreeSet<ItemId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ItemReplica {
    pub version: u64,
    pub produced_at: SimTime,
    pub received_at: SimTime,
}

/// Seconds since the replica's version was produced by its authority.
pub fn age_of(replica: &ItemReplica, now: SimTime) -> f64 {
    now.secs_since(replica.produced_at)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconcileOutcome {
    /// Incoming version was newer and replaced the local copy (or filled an empty slot).
    Upgraded,
    /// Same version already held; nothing to do.
    Unchanged,
    /// Incoming version was older and was discarded.
    Stale,
}

/// Keeps the higher version. Items have a single authority, so version order is total.
pub fn reconcile(local: Option<&ItemReplica>, incoming: ItemReplica) -> (ItemReplica, ReconcileOutcome) {
    match local {
        None => (incoming, ReconcileOutcome::Upgraded),
        Some(l) => match incoming.version.cmp(&l.version) {
            Ordering::Greater => (incoming, ReconcileOutcome::Upgraded),
            Ordering::Equal => (*l, ReconcileOutcome::Unchanged),
            Ordering::Less => (*l, ReconcileOutcome::Stale),
        },
    }
}

/// Every replica held by every device, one version per (holder, item).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplicaStore {
    replicas: BTreeMap<(DeviceId, ItemId), ItemReplica>,
}

impl ReplicaStore {
    pub fn get(&self, holder: DeviceId, item: &ItemId) -> Option<&ItemReplica> {
        self.replicas.get(&(holder, item.clone()))
    }

    pub fn version(&self, holder: DeviceId, item: &ItemId) -> u64 {
        self.get(holder, item).map_or(0, |r| r.version)
    }

    pub fn offer(&mut self, holder: DeviceId, item: &ItemId, incoming: ItemReplica) -> ReconcileOutcome {
        let key = (holder, item.clone());
        let (kept, outcome) = reconcile(self.replicas.get(&key), incoming);
        self.replicas.insert(key, kept);
        outcome
    }

    pub fn held_by(&self, holder: DeviceId) -> impl Iterator<Item = (&ItemId, &ItemReplica)> {
        self.replicas.range((holder, ItemId::new(""))..).take_while(move |((h, _), _)| *h == holder).map(|((_, i), r)| (i, r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InjuryReason {
    /// Held replica is older than tolerated (seconds of age).
    Age(f64),
    /// No replica yet and the seeker has waited too long (seconds waited).
    Wait(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Injury {
    pub seeker: DeviceId,
    pub item: ItemId,
    pub max_tolerated_age: f64,
    pub reason: InjuryReason,
}

/// Returns every requirement whose invariant is injured at `now`. Bounds are
/// strict: an age or wait exactly at the limit is still acceptable.
pub fn check_requirements<'a>(
    requirements: impl IntoIterator<Item = &'a ConsistencyRequirement>,
    replicas: &ReplicaStore,
    now: SimTime,
) -> Vec<Injury> {
    let mut out = Vec::new();
    for req in requirements {
        let reason = match replicas.get(req.seeker, &req.item) {
            Some(r) => {
                let age = age_of(r, now);
                (age > req.max_tolerated_age).then_some(InjuryReason::Age(age))
            }
            None => {
                let waited = now.secs_since(req.declared_at);
                (waited > req.max_wait).then_some(InjuryReason::Wait(waited))
            }
        };
        if let Some(reason) = reason {
            out.push(Injury {
                seeker: req.seeker,
                item: req.item.clone(),
                max_tolerated_age: req.max_tolerated_age,
                reason,
            });
        }
    }
    out
}

/// Injured seekers sharing a clique and an item; served by one injection.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerGroup {
    pub clique: CliqueId,
    pub item: ItemId,
    pub seekers: BTreeSet<DeviceId>,
    pub strictest_age: f64,
}

/// Groups injuries by (clique, item) and drops groups that already have an
/// injection in flight. Output is ordered by (clique, item).
pub fn trigger_injections(
    injured: &[Injury],
    clique_of: impl Fn(DeviceId) -> Option<CliqueId>,
    in_flight: &BTreeSet<(CliqueId, ItemId)>,
) -> Vec<TriggerGroup> {
    let mut groups: BTreeMap<(CliqueId, ItemId), TriggerGroup> = BTreeMap::new();
    for inj in injured {
        let Some(clique) = clique_of(inj.seeker) else { continue };
        let key = (clique, inj.item.clone());
        if in_flight.contains(&key) {
            continue;
        }
        let g = groups.entry(key).or_insert_with(|| TriggerGroup {
            clique,
            item: inj.item.clone(),
            seekers: BTreeSet::new(),
            strictest_age: f64::INFINITY,
        });
        g.seekers.insert(inj.seeker);
        g.strictest_age = g.strictest_age.min(inj.max_tolerated_age);
    }
    groups.into_values().collect()
}

/// Sort key for dissemination: higher priority first, then stricter seekers,
/// then lower clique id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetRank {
    pub priority: Priority,
    pub strictest_age: f64,
    pub clique: CliqueId,
}

impl TargetRank {
    pub fn cmp_urgency(&self, other: &Self) -> Ordering {
        other
            .priority
            .cmp(&self.priority)
            .then(self.strictest_age.total_cmp(&other.strictest_age))
            .then(self.clique.cmp(&other.clique))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PropagationPlan {
    pub targets: Vec<CliqueId>,
    /// Seekers that can never be served under the item's scope.
    pub unservable: Vec<DeviceId>,
}

/// Orders the cliques that hold seekers of `item`. A clique-local item only
/// ever targets its origin clique.
pub fn propagation_plan<'a>(
    item: &ItemId,
    properties: &ConsistencyProperties,
    origin_clique: Option<CliqueId>,
    requirements: impl IntoIterator<Item = &'a ConsistencyRequirement>,
    clique_of: impl Fn(DeviceId) -> Option<CliqueId>,
) -> PropagationPlan {
    let mut strictest: BTreeMap<CliqueId, f64> = BTreeMap::new();
    let mut plan = PropagationPlan::default();
    for req in requirements.into_iter().filter(|r| &r.item == item) {
        let Some(c) = clique_of(req.seeker) else { continue };
        if properties.scope == Scope::CliqueLocal && Some(c) != origin_clique {
            plan.unservable.push(req.seeker);
            continue;
        }
        let e = strictest.entry(c).or_insert(f64::INFINITY);
        *e = e.min(req.max_tolerated_age);
    }
    let mut ranks: Vec<TargetRank> = strictest
        .into_iter()
        .map(|(clique, strictest_age)| TargetRank { priority: properties.priority, strictest_age, clique })
        .collect();
    ranks.sort_by(TargetRank::cmp_urgency);
    plan.targets = ranks.into_iter().map(|r| r.clique).collect();
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(s: f64) -> SimTime {
        SimTime::from_secs_f64(s)
    }

    fn replica(version: u64, produced: f64) -> ItemReplica {
        ItemReplica { version, produced_at: t(produced), received_at: t(produced) }
    }

    fn req(seeker: u32, age: f64, wait: f64) -> ConsistencyRequirement {
        ConsistencyRequirement {
            seeker: DeviceId(seeker),
            item: ItemId::new("bus"),
            max_tolerated_age: age,
            max_wait: wait,
            declared_at: t(0.0),
        }
    }

    #[test]
    fn age_is_measured_from_production() {
        let mut r = replica(1, 10.0);
        r.received_at = t(20.0);
        assert_eq!(age_of(&r, t(25.0)), 15.0);
        assert_eq!(age_of(&r, t(10.0)), 0.0);
        let mut store = ReplicaStore::default();
        let item = ItemId::new("bus");
        store.offer(DeviceId(1), &item, r);
        store.offer(DeviceId(1), &item, replica(2, 24.0));
        assert_eq!(age_of(store.get(DeviceId(1), &item).unwrap(), t(25.0)), 1.0);
    }

    #[test]
    fn reconcile_keeps_max() {
        assert_eq!(reconcile(Some(&replica(3, 0.0)), replica(5, 1.0)), (replica(5, 1.0), ReconcileOutcome::Upgraded));
        assert_eq!(reconcile(Some(&replica(5, 1.0)), replica(5, 1.0)).1, ReconcileOutcome::Unchanged);
        assert_eq!(reconcile(Some(&replica(5, 1.0)), replica(3, 0.0)), (replica(5, 1.0), ReconcileOutcome::Stale));
    }

    #[test]
    fn injury_rules() {
        let item = ItemId::new("bus");
        let mut store = ReplicaStore::default();
        store.offer(DeviceId(1), &item, replica(1, 70.0));
        store.offer(DeviceId(3), &item, replica(1, 40.0));
        let reqs = vec![req(1, 60.0, 10.0), req(2, 60.0, 90.0), req(3, 60.0, 10.0)];
        let hurt = check_requirements(&reqs, &store, t(100.0));
        // seeker 1: age 30 < 60; seeker 2: waited 100 > 90; seeker 3: age exactly 60
        assert_eq!(hurt.len(), 1);
        assert_eq!(hurt[0].seeker, DeviceId(2));
        assert!(matches!(hurt[0].reason, InjuryReason::Wait(w) if w == 100.0));
        assert_eq!(check_requirements(&reqs, &store, t(100.000001)).len(), 2);
    }

    #[test]
    fn trigger_dedups_per_clique_and_item() {
        let injured: Vec<Injury> = (1..=4)
            .map(|s| Injury { seeker: DeviceId(s), item: ItemId::new("bus"), max_tolerated_age: 30.0 + s as f64, reason: InjuryReason::Wait(1.0) })
            .collect();
        let one = trigger_injections(&injured, |_| Some(CliqueId(1)), &BTreeSet::new());
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].seekers.len(), 4);
        assert_eq!(one[0].strictest_age, 31.0);

        let two = trigger_injections(&injured, |d| Some(CliqueId(d.0 % 2)), &BTreeSet::new());
        assert_eq!(two.len(), 2);

        let busy: BTreeSet<_> = [(CliqueId(1), ItemId::new("bus"))].into_iter().collect();
        assert!(trigger_injections(&injured, |_| Some(CliqueId(1)), &busy).is_empty());
    }

    #[test]
    fn plan_orders_by_strictness_then_id() {
        let props = ConsistencyProperties { max_staleness: 60.0, priority: Priority::High, scope: Scope::Global };
        let reqs = vec![req(1, 120.0, 1.0), req(2, 30.0, 1.0), req(3, 50.0, 1.0)];
        let clique = |d: DeviceId| Some(CliqueId(if d.0 == 1 { 9 } else { 4 }));
        let plan = propagation_plan(&ItemId::new("bus"), &props, None, &reqs, clique);
        assert_eq!(plan.targets, vec![CliqueId(4), CliqueId(9)]);

        let tie = vec![req(1, 30.0, 1.0), req(2, 30.0, 1.0)];
        let plan = propagation_plan(&ItemId::new("bus"), &props, None, &tie, |d| Some(CliqueId(10 - d.0)));
        assert_eq!(plan.targets, vec![CliqueId(8), CliqueId(9)]);
    }

    #[test]
    fn clique_local_plan_targets_only_origin() {
        let props = ConsistencyProperties { max_staleness: 60.0, priority: Priority::Normal, scope: Scope::CliqueLocal };
        let reqs = vec![req(1, 30.0, 1.0), req(2, 30.0, 1.0)];
        let plan = propagation_plan(&ItemId::new("bus"), &props, Some(CliqueId(1)), &reqs, |d| Some(CliqueId(d.0)));
        assert_eq!(plan.targets, vec![CliqueId(1)]);
        assert_eq!(plan.unservable, vec![DeviceId(2)]);
    }

    #[test]
    fn priority_dominates_strictness() {
        let hi = TargetRank { priority: Priority::High, strictest_age: 300.0, clique: CliqueId(5) };
        let lo = TargetRank { priority: Priority::Low, strictest_age: 1.0, clique: CliqueId(1) };
        assert_eq!(hi.cmp_urgency(&lo), Ordering::Less);
    }

    proptest! {
        #[test]
        fn stored_version_never_decreases(offers in proptest::collection::vec(0u64..20, 1..50)) {
            let mut store = ReplicaStore::default();
            let item = ItemId::new("x");
            let mut last = 0;
            for v in offers {
                store.offer(DeviceId(1), &item, replica(v, v as f64));
                let now = store.version(DeviceId(1), &item);
                prop_assert!(now >= last);
                last = now;
            }
        }
    }
}
