use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ids::DeviceId;
use crate::protocol::backbone::hex;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub backbone_msg_cost: u64,
    pub adhoc_msg_cost: u64,
    /// Battery fraction drained per backbone message sent.
    pub backbone_energy: f64,
    /// Battery fraction drained per ad-hoc message sent.
    pub adhoc_energy: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { backbone_msg_cost: 100, adhoc_msg_cost: 1, backbone_energy: 1e-3, adhoc_energy: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostModelError {
    #[error("backbone message cost ({backbone}) must exceed ad-hoc message cost ({adhoc})")]
    BackboneNotDearer { backbone: u64, adhoc: u64 },
    #[error("ad-hoc message cost must be positive")]
    FreeAdhoc,
    #[error("energy per message must be finite and within [0, 1]")]
    BadEnergy,
}

impl CostModel {
    pub fn validate(&self) -> Result<(), CostModelError> {
        if self.adhoc_msg_cost == 0 {
            return Err(CostModelError::FreeAdhoc);
        }
        if self.backbone_msg_cost <= self.adhoc_msg_cost {
            return Err(CostModelError::BackboneNotDearer { backbone: self.backbone_msg_cost, adhoc: self.adhoc_msg_cost });
        }
        for e in [self.backbone_energy, self.adhoc_energy] {
            if !(0.0..=1.0).contains(&e) {
                return Err(CostModelError::BadEnergy);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LedgerEntry {
    /// Backbone units this device pays, its own share included.
    pub backbone_units: u64,
    pub adhoc_units: u64,
    /// Part of `backbone_units` allocated from injections someone else performed.
    pub shared_units_received: u64,
    pub energy_spent: f64,
}

impl LedgerEntry {
    pub fn total_units(&self) -> u64 {
        self.backbone_units + self.adhoc_units
    }
}

/// Splits `total` units equally over `interested`. The integer remainder goes
/// to `anchor` when it is interested, otherwise to the lowest interested id.
/// An empty interest set bills everything to `anchor`.
pub fn split_cost(total: u64, interested: &BTreeSet<DeviceId>, anchor: DeviceId) -> Vec<(DeviceId, u64)> {
    if interested.is_empty() {
        return vec![(anchor, total)];
    }
    let n = interested.len() as u64;
    let (share, rem) = (total / n, total % n);
    let lucky = if interested.contains(&anchor) { anchor } else { *interested.iter().next().expect("non-empty") };
    interested.iter().map(|&d| (d, if d == lucky { share + rem } else { share })).collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CostLedger {
    entries: BTreeMap<DeviceId, LedgerEntry>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entry(&self, d: DeviceId) -> LedgerEntry {
        self.entries.get(&d).copied().unwrap_or_default()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&DeviceId, &LedgerEntry)> {
        self.entries.iter()
    }

    pub fn charge_adhoc(&mut self, sender: DeviceId, units: u64) {
        self.entries.entry(sender).or_default().adhoc_units += units;
    }

    /// Bills backbone units that `device` incurred on its own behalf.
    pub fn charge_backbone(&mut self, device: DeviceId, units: u64) {
        self.entries.entry(device).or_default().backbone_units += units;
    }

    pub fn charge_energy(&mut self, device: DeviceId, energy: f64) {
        self.entries.entry(device).or_default().energy_spent += energy;
    }

    /// Splits an injection's backbone cost over the interested devices.
    /// `injection_point` is the device that performed the backbone exchange; shares of
    /// every other device count as received.
    pub fn bill_injection(&mut self, total: u64, interested: &BTreeSet<DeviceId>, injection_point: DeviceId) {
        for (d, units) in split_cost(total, interested, injection_point) {
            let e = self.entries.entry(d).or_default();
            e.backbone_units += units;
            if d != injection_point {
                e.shared_units_received += units;
            }
        }
    }

    pub fn total_backbone_units(&self) -> u64 {
        self.entries.values().map(|e| e.backbone_units).sum()
    }

    pub fn total_adhoc_units(&self) -> u64 {
        self.entries.values().map(|e| e.adhoc_units).sum()
    }

    pub fn total_units(&self) -> u64 {
        self.total_backbone_units() + self.total_adhoc_units()
    }

    /// SHA-256 over one `device backbone adhoc shared` line per device with a
    /// nonzero unit balance, in id order. Energy is excluded: it is a float and
    /// not reconstructible from the trace.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (d, e) in &self.entries {
            if e.backbone_units == 0 && e.adhoc_units == 0 && e.shared_units_received == 0 {
                continue;
            }
            h.update(format!("{d} {} {} {}\n", e.backbone_units, e.adhoc_units, e.shared_units_received).as_bytes());
        }
        hex(&h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[u32]) -> BTreeSet<DeviceId> {
        ids.iter().map(|&i| DeviceId(i)).collect()
    }

    #[test]
    fn equal_split() {
        let s = split_cost(100, &set(&[1, 2, 3, 4]), DeviceId(1));
        assert!(s.iter().all(|&(_, u)| u == 25));
    }

    #[test]
    fn remainder_goes_to_injection_point() {
        let s = split_cost(100, &set(&[1, 2, 3]), DeviceId(2));
        assert_eq!(s, vec![(DeviceId(1), 33), (DeviceId(2), 34), (DeviceId(3), 33)]);
        let s = split_cost(100, &set(&[4, 5, 6]), DeviceId(9));
        assert_eq!(s[0], (DeviceId(4), 34));
    }

    #[test]
    fn sole_payer_gets_nothing_shared() {
        let mut l = CostLedger::new();
        l.bill_injection(100, &set(&[7]), DeviceId(7));
        assert_eq!(l.entry(DeviceId(7)).backbone_units, 100);
        assert_eq!(l.entry(DeviceId(7)).shared_units_received, 0);
    }

    #[test]
    fn shared_units_tracked() {
        let mut l = CostLedger::new();
        l.bill_injection(200, &set(&[1, 2]), DeviceId(1));
        assert_eq!(l.entry(DeviceId(2)).shared_units_received, 100);
        assert_eq!(l.entry(DeviceId(1)).shared_units_received, 0);
        assert_eq!(l.total_backbone_units(), 200);
    }

    #[test]
    fn model_premise_enforced() {
        assert!(CostModel::default().validate().is_ok());
        let flat = CostModel { backbone_msg_cost: 1, ..CostModel::default() };
        assert!(matches!(flat.validate(), Err(CostModelError::BackboneNotDearer { .. })));
        let free = CostModel { adhoc_msg_cost: 0, ..CostModel::default() };
        assert_eq!(free.validate(), Err(CostModelError::FreeAdhoc));
    }

    #[test]
    fn digest_ignores_energy() {
        let mut a = CostLedger::new();
        a.charge_adhoc(DeviceId(1), 3);
        let mut b = a.clone();
        b.charge_energy(DeviceId(1), 0.5);
        assert_eq!(a.digest(), b.digest());
        b.charge_adhoc(DeviceId(1), 1);
        assert_ne!(a.digest(), b.digest());
    }

    proptest::proptest! {
        #[test]
        fn split_conserves(total in 0u64..100_000, n in 1u32..40, anchor in 0u32..50) {
            let interested: BTreeSet<DeviceId> = (0..n).map(DeviceId).collect();
            let s = split_cost(total, &interested, DeviceId(anchor));
            proptest::prop_assert_eq!(s.iter().map(|&(_, u)| u).sum::<u64>(), total);
            let lo = s.iter().map(|&(_, u)| u).min().unwrap();
            let hi = s.iter().map(|&(_, u)| u).max().unwrap();
            proptest::prop_assert!(hi - lo < u64::from(n));
        }
    }
}
