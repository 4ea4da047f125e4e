//! Injection Point scoring, election, maintenance and multi-point planning.
//!
//! A device is scored on five normalized criteria (battery, expected dwell
//! time, local clustering, load, equipment) combined linearly. The elected
//! injection point of a clique is the eligible member with the highest total,
//! lowest id on ties. Re-election of a sitting injection point is damped by a
//! hysteresis margin.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{CliqueId, DeviceId, ItemId};
use crate::sim::{AdHocTopology, Clique, Device};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreWeights {
    pub power: f64,
    pub dwell: f64,
    pub cluster: f64,
    pub load: f64,
    pub equipment: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights { power: 0.3, dwell: 0.25, cluster: 0.2, load: 0.15, equipment: 0.1 }
    }
}

impl ScoreWeights {
    pub fn uniform() -> Self {
        ScoreWeights { power: 0.2, dwell: 0.2, cluster: 0.2, load: 0.2, equipment: 0.2 }
    }

    pub fn validate(&self) -> Result<(), String> {
        let all = [self.power, self.dwell, self.cluster, self.load, self.equipment];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err("weights must be finite and non-negative".into());
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("weights must sum to 1 (got {sum})"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceScore {
    pub device: DeviceId,
    pub power_term: f64,
    pub dwell_term: f64,
    pub cluster_term: f64,
    pub load_term: f64,
    pub equipment_term: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ElectionError {
    #[error("device {0} is dead or not backbone-capable")]
    NotEligible(DeviceId),
    #[error("device {0} is not a member of clique {1}")]
    NotMember(DeviceId, CliqueId),
    #[error("clique {0} has no eligible device")]
    NoEligibleDevice(CliqueId),
}

/// Inputs shared by every scoring call in one election.
#[derive(Debug, Clone, Copy)]
pub struct ElectionContext<'a> {
    pub devices: &'a BTreeMap<DeviceId, Device>,
    pub topology: &'a AdHocTopology,
    pub weights: &'a ScoreWeights,
    /// Normalizes the dwell term, in seconds.
    pub horizon: f64,
    pub now: SimTime,
}

pub fn is_eligible(d: &Device) -> bool {
    d.can_use_backbone()
}

pub fn score_device(device: &Device, clique: &Clique, ctx: &ElectionContext<'_>) -> Result<DeviceScore, ElectionError> {
    if !clique.contains(device.id) {
        return Err(ElectionError::NotMember(device.id, clique.id));
    }
    if !is_eligible(device) {
        return Err(ElectionError::NotEligible(device.id));
    }
    let power_term = device.battery.clamp(0.0, 1.0);
    let dwell_term = match device.expected_departure {
        None => 1.0,
        Some(dep) if ctx.horizon > 0.0 => (dep.secs_since(ctx.now) / ctx.horizon).clamp(0.0, 1.0),
        Some(_) => 1.0,
    };
    let cluster_term = ctx.topology.clustering_coefficient(device.id);
    let load_term = 1.0 / (1.0 + f64::from(device.load));
    let equipment_term = device.equipment_score.clamp(0.0, 1.0);
    let w = ctx.weights;
    let total = w.power * power_term
        + w.dwell * dwell_term
        + w.cluster * cluster_term
        + w.load * load_term
        + w.equipment * equipment_term;
    Ok(DeviceScore { device: device.id, power_term, dwell_term, cluster_term, load_term, equipment_term, total })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Election {
    pub winner: DeviceId,
    pub score: DeviceScore,
    /// Probe + reply for every other member.
    pub adhoc_messages: usize,
}

pub fn election_message_count(clique: &Clique) -> usize {
    2 * clique.len().saturating_sub(1)
}

/// Scores every eligible member and returns the best one (lowest id on ties).
pub fn best_candidate(clique: &Clique, ctx: &ElectionContext<'_>) -> Option<DeviceScore> {
    let mut best: Option<DeviceScore> = None;
    for id in &clique.members {
        let Some(dev) = ctx.devices.get(id) else { continue };
        let Ok(s) = score_device(dev, clique, ctx) else { continue };
        // members iterate in ascending id order, so strict > keeps the lowest id on ties
        if best.is_none_or(|b| s.total > b.total) {
            best = Some(s);
        }
    }
    best
}

pub fn elect_injection_point(clique: &Clique, ctx: &ElectionContext<'_>) -> Result<Election, ElectionError> {
    let score = best_candidate(clique, ctx).ok_or(ElectionError::NoEligibleDevice(clique.id))?;
    Ok(Election { winner: score.device, score, adhoc_messages: election_message_count(clique) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReelectReason {
    /// No injection point was set.
    Initial,
    /// The incumbent is no longer a member of the clique.
    Departed,
    /// The incumbent is alive in the clique but can no longer serve.
    Ineligible,
}

impl ReelectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ReelectReason::Initial => "initial",
            ReelectReason::Departed => "departed",
            ReelectReason::Ineligible => "ineligible",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Maintenance {
    Keep,
    Reelect { reason: ReelectReason, election: Election },
    Handover { from: DeviceId, old_score: f64, election: Election },
    /// The clique lost every eligible device; the injection point must be cleared.
    Vacant,
}

/// Decides whether a clique's injection point should change.
///
/// A missing or unusable incumbent triggers immediate re-election. A healthy
/// incumbent is displaced only if the best challenger beats its score by the
/// relative `hysteresis` margin; otherwise nothing happens and no messages flow.
pub fn maintain_injection_point(clique: &Clique, ctx: &ElectionContext<'_>, hysteresis: f64) -> Maintenance {
    let reason = match clique.injection_point {
        None => Some(ReelectReason::Initial),
        Some(ip) if !clique.contains(ip) => Some(ReelectReason::Departed),
        Some(ip) if !ctx.devices.get(&ip).is_some_and(is_eligible) => Some(ReelectReason::Ineligible),
        Some(_) => None,
    };
    if let Some(reason) = reason {
        return match elect_injection_point(clique, ctx) {
            Ok(election) => Maintenance::Reelect { reason, election },
            Err(_) => Maintenance::Vacant,
        };
    }
    let incumbent = clique.injection_point.expect("checked above");
    let inc = score_device(&ctx.devices[&incumbent], clique, ctx).expect("incumbent eligible");
    let Some(best) = best_candidate(clique, ctx) else { return Maintenance::Vacant };
    if best.device != incumbent && best.total > inc.total * (1.0 + hysteresis) {
        Maintenance::Handover {
            from: incumbent,
            old_score: inc.total,
            election: Election { winner: best.device, score: best, adhoc_messages: election_message_count(clique) },
        }
    } else {
        Maintenance::Keep
    }
}

/// Devices within one clique that share interest in the same item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterestGroup {
    pub clique: CliqueId,
    pub item: ItemId,
    pub members: BTreeSet<DeviceId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub clique: CliqueId,
    pub injection_point: DeviceId,
    pub groups: Vec<InterestGroup>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MultiInjectionPlan {
    pub assignments: Vec<Assignment>,
    /// Cliques with interested devices but no eligible member.
    pub uncovered: Vec<CliqueId>,
}

impl MultiInjectionPlan {
    pub fn injection_point_of(&self, device: DeviceId) -> Option<DeviceId> {
        self.assignments
            .iter()
            .find(|a| a.groups.iter().any(|g| g.members.contains(&device)))
            .map(|a| a.injection_point)
    }
}

/// Plans one injection point per clique that has interested devices, with one
/// interest group per (clique, item). `choose` supplies the injection point of
/// a clique (typically the sitting one, else a fresh election).
pub fn plan_multi_injection<F>(
    cliques: &[Clique],
    interests: &BTreeMap<DeviceId, BTreeSet<ItemId>>,
    mut choose: F,
) -> MultiInjectionPlan
where
    F: FnMut(&Clique) -> Option<DeviceId>,
{
    let mut plan = MultiInjectionPlan::default();
    for clique in cliques {
        let mut by_item: BTreeMap<&ItemId, BTreeSet<DeviceId>> = BTreeMap::new();
        for m in &clique.members {
            for item in interests.get(m).into_iter().flatten() {
                by_item.entry(item).or_default().insert(*m);
            }
        }
        if by_item.is_empty() {
            continue;
        }
        match choose(clique) {
            Some(ip) => plan.assignments.push(Assignment {
                clique: clique.id,
                injection_point: ip,
                groups: by_item
                    .into_iter()
                    .map(|(item, members)| InterestGroup { clique: clique.id, item: item.clone(), members })
                    .collect(),
            }),
            None => plan.uncovered.push(clique.id),
        }
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Point;

    fn capable(id: u32) -> Device {
        let mut d = Device::new(DeviceId(id), Point::new(0.0, 0.0));
        d.backbone_capable = true;
        d
    }

    fn clique_of(ids: &[u32]) -> Clique {
        Clique {
            id: CliqueId(*ids.iter().min().unwrap()),
            members: ids.iter().map(|&i| DeviceId(i)).collect(),
            injection_point: None,
        }
    }

    fn fleet(devs: Vec<Device>) -> BTreeMap<DeviceId, Device> {
        devs.into_iter().map(|d| (d.id, d)).collect()
    }

    #[test]
    fn uniform_weights_arithmetic() {
        let devices = fleet(vec![capable(1)]);
        let topo = AdHocTopology::from_edges([DeviceId(1)], &[]);
        let w = ScoreWeights::uniform();
        let ctx = ElectionContext { devices: &devices, topology: &topo, weights: &w, horizon: 600.0, now: SimTime::ZERO };
        let s = score_device(&devices[&DeviceId(1)], &clique_of(&[1]), &ctx).unwrap();
        assert!((s.total - 0.8).abs() < 1e-12);
        assert_eq!(s.cluster_term, 0.0);
    }

    #[test]
    fn dwell_term_normalizes_by_horizon() {
        let mut d = capable(1);
        d.expected_departure = Some(SimTime::from_secs_f64(400.0));
        let devices = fleet(vec![d]);
        let topo = AdHocTopology::from_edges([DeviceId(1)], &[]);
        let w = ScoreWeights::default();
        let ctx = ElectionContext {
            devices: &devices,
            topology: &topo,
            weights: &w,
            horizon: 600.0,
            now: SimTime::from_secs_f64(100.0),
        };
        let s = score_device(&devices[&DeviceId(1)], &clique_of(&[1]), &ctx).unwrap();
        assert!((s.dwell_term - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ineligible_devices_rejected() {
        let mut dead = capable(1);
        dead.battery = 0.0;
        let plain = Device::new(DeviceId(2), Point::new(0.0, 0.0));
        let devices = fleet(vec![dead, plain]);
        let topo = AdHocTopology::from_edges([DeviceId(1), DeviceId(2)], &[]);
        let w = ScoreWeights::default();
        let ctx = ElectionContext { devices: &devices, topology: &topo, weights: &w, horizon: 600.0, now: SimTime::ZERO };
        let c = clique_of(&[1, 2]);
        assert_eq!(score_device(&devices[&DeviceId(1)], &c, &ctx), Err(ElectionError::NotEligible(DeviceId(1))));
        assert_eq!(elect_injection_point(&c, &ctx), Err(ElectionError::NoEligibleDevice(CliqueId(1))));
    }

    #[test]
    fn singleton_election_costs_nothing() {
        let devices = fleet(vec![capable(7)]);
        let topo = AdHocTopology::from_edges([DeviceId(7)], &[]);
        let w = ScoreWeights::default();
        let ctx = ElectionContext { devices: &devices, topology: &topo, weights: &w, horizon: 600.0, now: SimTime::ZERO };
        let e = elect_injection_point(&clique_of(&[7]), &ctx).unwrap();
        assert_eq!((e.winner, e.adhoc_messages), (DeviceId(7), 0));
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let devices = fleet(vec![capable(5), capable(3)]);
        let topo = AdHocTopology::from_edges([DeviceId(3), DeviceId(5)], &[(DeviceId(3), DeviceId(5))]);
        let w = ScoreWeights::default();
        let ctx = ElectionContext { devices: &devices, topology: &topo, weights: &w, horizon: 600.0, now: SimTime::ZERO };
        let e = elect_injection_point(&clique_of(&[3, 5]), &ctx).unwrap();
        assert_eq!(e.winner, DeviceId(3));
        assert_eq!(e.adhoc_messages, 2);
    }

    fn power_only_pair(incumbent_battery: f64, challenger_battery: f64) -> Maintenance {
        let mut a = capable(1);
        a.battery = incumbent_battery;
        let mut b = capable(2);
        b.battery = challenger_battery;
        let devices = fleet(vec![a, b]);
        let topo = AdHocTopology::from_edges([DeviceId(1), DeviceId(2)], &[(DeviceId(1), DeviceId(2))]);
        let w = ScoreWeights { power: 1.0, dwell: 0.0, cluster: 0.0, load: 0.0, equipment: 0.0 };
        let ctx = ElectionContext { devices: &devices, topology: &topo, weights: &w, horizon: 600.0, now: SimTime::ZERO };
        let mut c = clique_of(&[1, 2]);
        c.injection_point = Some(DeviceId(1));
        maintain_injection_point(&c, &ctx, 0.1)
    }

    #[test]
    fn hysteresis_blocks_small_gain() {
        // 0.50 < 0.48 * 1.1 = 0.528
        assert_eq!(power_only_pair(0.48, 0.50), Maintenance::Keep);
    }

    #[test]
    fn hysteresis_allows_large_gain() {
        match power_only_pair(0.48, 0.60) {
            Maintenance::Handover { from, election, .. } => {
                assert_eq!(from, DeviceId(1));
                assert_eq!(election.winner, DeviceId(2));
            }
            other => panic!("expected handover, got {other:?}"),
        }
    }

    #[test]
    fn departed_incumbent_reelects_immediately() {
        let devices = fleet(vec![capable(1), capable(2)]);
        let topo = AdHocTopology::from_edges([DeviceId(2)], &[]);
        let w = ScoreWeights::default();
        let ctx = ElectionContext { devices: &devices, topology: &topo, weights: &w, horizon: 600.0, now: SimTime::ZERO };
        let mut c = clique_of(&[2]);
        c.injection_point = Some(DeviceId(1));
        assert!(matches!(
            maintain_injection_point(&c, &ctx, 0.15),
            Maintenance::Reelect { reason: ReelectReason::Departed, election } if election.winner == DeviceId(2)
        ));
    }

    #[test]
    fn one_clique_two_items_gives_one_point_two_groups() {
        let cliques = vec![clique_of(&[1, 2, 3]), clique_of(&[4])];
        let mut interests = BTreeMap::new();
        interests.insert(DeviceId(1), [ItemId::new("a")].into_iter().collect());
        interests.insert(DeviceId(2), [ItemId::new("a"), ItemId::new("b")].into_iter().collect());
        let plan = plan_multi_injection(&cliques, &interests, |c| Some(*c.members.iter().next().unwrap()));
        assert_eq!(plan.assignments.len(), 1);
        assert_eq!(plan.assignments[0].groups.len(), 2);
        assert!(plan.uncovered.is_empty());
    }

    #[test]
    fn disjoint_interested_cliques_each_get_a_point() {
        let cliques = vec![clique_of(&[1, 2]), clique_of(&[3])];
        let interests: BTreeMap<_, _> =
            [1, 3].iter().map(|&i| (DeviceId(i), [ItemId::new("a")].into_iter().collect())).collect();
        let plan = plan_multi_injection(&cliques, &interests, |c| Some(*c.members.iter().next().unwrap()));
        assert_eq!(plan.assignments.len(), 2);
        assert_eq!(plan.injection_point_of(DeviceId(3)), Some(DeviceId(3)));
    }
}
