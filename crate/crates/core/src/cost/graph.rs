use std::collections::{btree_map::Entry, BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::ids::DeviceId;
use crate::sim::AdHocTopology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("graph metrics need at least two devices")]
    FewerThanTwoDevices,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphMetrics {
    /// Mean hop distance over connected ordered pairs; `None` if no pair is connected.
    pub characteristic_path_length: Option<f64>,
    pub disconnected_fraction: f64,
    /// Mean of 1/d over all ordered pairs, 0 for disconnected pairs.
    pub global_efficiency: f64,
}

fn hop_distances(topology: &AdHocTopology, from: DeviceId) -> BTreeMap<DeviceId, u32> {
    let mut dist = BTreeMap::from([(from, 0u32)]);
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        let du = dist[&u];
        for v in topology.neighbors(u) {
            if let Entry::Vacant(e) = dist.entry(v) {
                e.insert(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

pub fn graph_efficiency(topology: &AdHocTopology) -> Result<GraphMetrics, GraphError> {
    let n = topology.node_count();
    if n < 2 {
        return Err(GraphError::FewerThanTwoDevices);
    }
    let pairs = (n * (n - 1)) as f64;
    let (mut connected, mut hops, mut inv) = (0u64, 0u64, 0.0f64);
    for u in topology.nodes() {
        for (v, d) in hop_distances(topology, u) {
            if v != u {
                connected += 1;
                hops += u64::from(d);
                inv += 1.0 / f64::from(d);
            }
        }
    }
    Ok(GraphMetrics {
        characteristic_path_length: (connected > 0).then(|| hops as f64 / connected as f64),
        disconnected_fraction: 1.0 - connected as f64 / pairs,
        global_efficiency: inv / pairs,
    })
}

/// The topology plus a virtual edge between every pair of `capable` nodes.
pub fn hybrid_topology(topology: &AdHocTopology, capable: &BTreeSet<DeviceId>) -> AdHocTopology {
    let mut edges: Vec<(DeviceId, DeviceId)> = topology.edges().into_iter().collect();
    let present: Vec<DeviceId> = capable.iter().copied().filter(|d| topology.contains(*d)).collect();
    for (i, &a) in present.iter().enumerate() {
        for &b in &present[i + 1..] {
            edges.push((a, b));
        }
    }
    AdHocTopology::from_edges(topology.nodes(), &edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: u32) -> Vec<DeviceId> {
        (0..n).map(DeviceId).collect()
    }

    #[test]
    fn complete_graph() {
        let n = ids(6);
        let mut e = Vec::new();
        for i in 0..6 {
            for j in i + 1..6 {
                e.push((n[i], n[j]));
            }
        }
        let m = graph_efficiency(&AdHocTopology::from_edges(n, &e)).unwrap();
        assert_eq!(m.global_efficiency, 1.0);
        assert_eq!(m.characteristic_path_length, Some(1.0));
        assert_eq!(m.disconnected_fraction, 0.0);
    }

    #[test]
    fn isolated_pair() {
        let m = graph_efficiency(&AdHocTopology::from_edges(ids(2), &[])).unwrap();
        assert_eq!(m.global_efficiency, 0.0);
        assert_eq!(m.characteristic_path_length, None);
        assert_eq!(m.disconnected_fraction, 1.0);
    }

    #[test]
    fn too_small() {
        assert_eq!(graph_efficiency(&AdHocTopology::from_edges(ids(1), &[])), Err(GraphError::FewerThanTwoDevices));
    }

    #[test]
    fn hybrid_links_capable_nodes() {
        let n = ids(4);
        let t = AdHocTopology::from_edges(n.clone(), &[(n[0], n[1]), (n[2], n[3])]);
        let h = hybrid_topology(&t, &[n[0], n[3]].into_iter().collect());
        assert!(h.has_edge(n[0], n[3]));
        assert_eq!(graph_efficiency(&h).unwrap().disconnected_fraction, 0.0);
    }
}
