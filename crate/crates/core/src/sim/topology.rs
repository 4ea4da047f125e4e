use std::collections::{BTreeMap, BTreeSet};

use crate::ids::DeviceId;
use crate::sim::device::Device;

/// Symmetric proximity graph over alive devices.
///
/// Devices `a` and `b` are linked iff their distance is at most
/// `min(range_a, range_b)` and both are alive. Every alive device appears as a
/// node even when isolated.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdHocTopology {
    adjacency: BTreeMap<DeviceId, BTreeSet<DeviceId>>,
    epoch: u64,
}

pub fn linked(a: &Device, b: &Device) -> bool {
    a.id != b.id
        && a.is_alive()
        && b.is_alive()
        && a.position.distance(&b.position) <= a.radio_range.min(b.radio_range)
}

impl AdHocTopology {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a topology straight from an explicit edge list (used for fixtures and metrics).
    pub fn from_edges(nodes: impl IntoIterator<Item = DeviceId>, edges: &[(DeviceId, DeviceId)]) -> Self {
        let mut adjacency: BTreeMap<DeviceId, BTreeSet<DeviceId>> =
            nodes.into_iter().map(|n| (n, BTreeSet::new())).collect();
        for &(a, b) in edges {
            if a == b {
                continue;
            }
            adjacency.entry(a).or_default().insert(b);
            adjacency.entry(b).or_default().insert(a);
        }
        AdHocTopology { adjacency, epoch: 0 }
    }

    /// Recomputes the link set from device state. The epoch advances only when
    /// the edge set actually changed.
    pub fn rebuild<'a>(&mut self, devices: impl IntoIterator<Item = &'a Device>) {
        let alive: Vec<&Device> = devices.into_iter().filter(|d| d.is_alive()).collect();
        let mut adjacency: BTreeMap<DeviceId, BTreeSet<DeviceId>> =
            alive.iter().map(|d| (d.id, BTreeSet::new())).collect();
        for (i, a) in alive.iter().enumerate() {
            for b in &alive[i + 1..] {
                if linked(a, b) {
                    adjacency.get_mut(&a.id).unwrap().insert(b.id);
                    adjacency.get_mut(&b.id).unwrap().insert(a.id);
                }
            }
        }
        if self.edges() != edges_of(&adjacency) {
            self.epoch += 1;
        }
        self.adjacency = adjacency;
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn nodes(&self) -> impl Iterator<Item = DeviceId> + '_ {
        self.adjacency.keys().copied()
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn contains(&self, d: DeviceId) -> bool {
        self.adjacency.contains_key(&d)
    }

    pub fn neighbors(&self, d: DeviceId) -> impl Iterator<Item = DeviceId> + '_ {
        self.adjacency.get(&d).into_iter().flat_map(|s| s.iter().copied())
    }

    pub fn degree(&self, d: DeviceId) -> usize {
        self.adjacency.get(&d).map_or(0, BTreeSet::len)
    }

    pub fn has_edge(&self, a: DeviceId, b: DeviceId) -> bool {
        self.adjacency.get(&a).is_some_and(|s| s.contains(&b))
    }

    /// Undirected edges as ordered pairs `(lo, hi)`.
    pub fn edges(&self) -> BTreeSet<(DeviceId, DeviceId)> {
        edges_of(&self.adjacency)
    }

    /// Local clustering coefficient: linked neighbor pairs over possible pairs,
    /// 0 for degree below 2.
    pub fn clustering_coefficient(&self, d: DeviceId) -> f64 {
        let Some(nbrs) = self.adjacency.get(&d) else { return 0.0 };
        let k = nbrs.len();
        if k < 2 {
            return 0.0;
        }
        let nbrs: Vec<DeviceId> = nbrs.iter().copied().collect();
        let mut links = 0usize;
        for (i, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[i + 1..] {
                if self.has_edge(a, b) {
                    links += 1;
                }
            }
        }
        links as f64 / (k * (k - 1) / 2) as f64
    }
}

fn edges_of(adj: &BTreeMap<DeviceId, BTreeSet<DeviceId>>) -> BTreeSet<(DeviceId, DeviceId)> {
    adj.iter()
        .flat_map(|(&a, s)| s.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::geometry::Point;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dev(id: u32, x: f64, y: f64, range: f64) -> Device {
        let mut d = Device::new(DeviceId(id), Point::new(x, y));
        d.radio_range = range;
        d
    }

    #[test]
    fn in_range_pair_is_linked() {
        let mut t = AdHocTopology::new();
        t.rebuild(&[dev(1, 0.0, 0.0, 10.0), dev(2, 5.0, 0.0, 10.0)]);
        assert!(t.has_edge(DeviceId(1), DeviceId(2)));
        assert!(t.has_edge(DeviceId(2), DeviceId(1)));
    }

    #[test]
    fn min_range_rule() {
        let mut t = AdHocTopology::new();
        t.rebuild(&[dev(1, 0.0, 0.0, 10.0), dev(2, 5.0, 0.0, 4.0)]);
        assert!(t.edges().is_empty());
        assert_eq!(t.node_count(), 2);
    }

    #[test]
    fn dead_devices_drop_out() {
        let mut b = dev(2, 1.0, 0.0, 10.0);
        b.battery = 0.0;
        let mut t = AdHocTopology::new();
        t.rebuild(&[dev(1, 0.0, 0.0, 10.0), b]);
        assert!(!t.contains(DeviceId(2)));
    }

    #[test]
    fn epoch_only_moves_on_edge_change() {
        let mut devs = vec![dev(1, 0.0, 0.0, 10.0), dev(2, 5.0, 0.0, 10.0)];
        let mut t = AdHocTopology::new();
        t.rebuild(&devs);
        assert_eq!(t.epoch(), 1);
        devs[1].position = Point::new(6.0, 0.0);
        t.rebuild(&devs);
        assert_eq!(t.epoch(), 1);
        devs[1].position = Point::new(60.0, 0.0);
        t.rebuild(&devs);
        assert_eq!(t.epoch(), 2);
    }

    #[test]
    fn fifty_random_devices_match_all_pairs_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xfeed);
        let devs: Vec<Device> = (0..50)
            .map(|i| dev(i, rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0), rng.gen_range(5.0..30.0)))
            .collect();
        let mut t = AdHocTopology::new();
        t.rebuild(&devs);
        let mut expected = BTreeSet::new();
        for a in &devs {
            for b in &devs {
                let d = ((a.position.x - b.position.x).powi(2) + (a.position.y - b.position.y).powi(2)).sqrt();
                if a.id < b.id && d <= a.radio_range.min(b.radio_range) {
                    expected.insert((a.id, b.id));
                }
            }
        }
        assert_eq!(t.edges(), expected);
    }

    #[test]
    fn clustering_of_triangle_vertex_is_one() {
        let ids = [DeviceId(1), DeviceId(2), DeviceId(3)];
        let t = AdHocTopology::from_edges(ids, &[(ids[0], ids[1]), (ids[1], ids[2]), (ids[0], ids[2])]);
        assert_eq!(t.clustering_coefficient(ids[0]), 1.0);
        let path = AdHocTopology::from_edges(ids, &[(ids[0], ids[1]), (ids[1], ids[2])]);
        assert_eq!(path.clustering_coefficient(ids[1]), 0.0);
        assert_eq!(path.clustering_coefficient(ids[0]), 0.0);
    }
}
