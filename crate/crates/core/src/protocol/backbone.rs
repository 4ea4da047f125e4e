use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::ids::{CliqueId, DeviceId, ItemId, ServiceId};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryEntry {
    pub device: DeviceId,
    pub registered_at: SimTime,
    pub last_known_clique: Option<CliqueId>,
    /// Set when a push found the device unreachable.
    pub stale: bool,
    /// Item versions the device advertised when it registered.
    pub versions: BTreeMap<ItemId, u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoredItem {
    pub version: u64,
    pub produced_at: SimTime,
    pub digest: u64,
}

/// Backbone-side state: who registered for which service, and the latest
/// version of each item the backbone holds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BackboneService {
    registry: BTreeMap<ServiceId, BTreeMap<DeviceId, RegistryEntry>>,
    item_store: BTreeMap<ItemId, StoredItem>,
    /// Items passing through a mediated wormhole, keyed by injection id. Never persisted.
    transit: BTreeMap<u64, (ItemId, StoredItem)>,
}

impl BackboneService {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or refreshes a registration. Returns true if the entry is new.
    pub fn register(
        &mut self,
        service: &ServiceId,
        device: DeviceId,
        now: SimTime,
        clique: Option<CliqueId>,
        versions: BTreeMap<ItemId, u64>,
    ) -> bool {
        let entries = self.registry.entry(service.clone()).or_default();
        let fresh = !entries.contains_key(&device);
        entries.insert(device, RegistryEntry { device, registered_at: now, last_known_clique: clique, stale: false, versions });
        fresh
    }

    pub fn entries(&self, service: &ServiceId) -> impl Iterator<Item = &RegistryEntry> {
        self.registry.get(service).into_iter().flat_map(|m| m.values())
    }

    pub fn entry(&self, service: &ServiceId, device: DeviceId) -> Option<&RegistryEntry> {
        self.registry.get(service).and_then(|m| m.get(&device))
    }

    pub fn registry_len(&self, service: &ServiceId) -> usize {
        self.registry.get(service).map_or(0, BTreeMap::len)
    }

    pub fn mark_stale(&mut self, service: &ServiceId, device: DeviceId) {
        if let Some(e) = self.registry.get_mut(service).and_then(|m| m.get_mut(&device)) {
            e.stale = true;
        }
    }

    /// Any backbone contact from a registered device refreshes where it is.
    pub fn touch(&mut self, device: DeviceId, clique: Option<CliqueId>) {
        for entries in self.registry.values_mut() {
            if let Some(e) = entries.get_mut(&device) {
                e.last_known_clique = clique;
                e.stale = false;
            }
        }
    }

    pub fn note_version(&mut self, device: DeviceId, item: &ItemId, version: u64) {
        for entries in self.registry.values_mut() {
            if let Some(e) = entries.get_mut(&device) {
                let v = e.versions.entry(item.clone()).or_insert(0);
                *v = (*v).max(version);
            }
        }
    }

    /// Drops registrations older than `ttl`. Returns how many were purged.
    pub fn purge(&mut self, now: SimTime, ttl: SimTime) -> usize {
        let mut purged = 0;
        for entries in self.registry.values_mut() {
            let before = entries.len();
            entries.retain(|_, e| e.registered_at + ttl >= now);
            purged += before - entries.len();
        }
        purged
    }

    /// Most recently registered, non-stale entry of `service` last seen in `clique`.
    pub fn latest_in_clique(&self, service: &ServiceId, clique: CliqueId) -> Option<&RegistryEntry> {
        self.entries(service)
            .filter(|e| !e.stale && e.last_known_clique == Some(clique))
            .max_by(|a, b| a.registered_at.cmp(&b.registered_at).then(b.device.cmp(&a.device)))
    }

    pub fn stored(&self, item: &ItemId) -> Option<&StoredItem> {
        self.item_store.get(item)
    }

    /// Keeps the newer version. Returns true if the store changed.
    pub fn store(&mut self, item: &ItemId, incoming: StoredItem) -> bool {
        match self.item_store.get(item) {
            Some(s) if s.version >= incoming.version => false,
            _ => {
                self.item_store.insert(item.clone(), incoming);
                true
            }
        }
    }

    pub fn hold_in_transit(&mut self, injection: u64, item: ItemId, s: StoredItem) {
        self.transit.insert(injection, (item, s));
    }

    pub fn release_transit(&mut self, injection: u64) -> Option<(ItemId, StoredItem)> {
        self.transit.remove(&injection)
    }

    pub fn transit_len(&self) -> usize {
        self.transit.len()
    }

    pub fn item_store_len(&self) -> usize {
        self.item_store.len()
    }

    /// SHA-256 over the persisted item store, for before/after comparisons.
    pub fn item_store_hash(&self) -> String {
        let mut h = Sha256::new();
        for (item, s) in &self.item_store {
            h.update(format!("{item}\t{}\t{}\t{}\n", s.version, s.produced_at, s.digest).as_bytes());
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
