use std::collections::{BTreeMap, BTreeSet};

use petgraph::unionfind::UnionFind;

use crate::ids::{CliqueId, DeviceId};
use crate::sim::topology::AdHocTopology;

/// A physical group of devices: one connected component of the proximity graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clique {
    pub id: CliqueId,
    pub members: BTreeSet<DeviceId>,
    pub injection_point: Option<DeviceId>,
}

impl Clique {
    pub fn contains(&self, d: DeviceId) -> bool {
        self.members.contains(&d)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Partitions the topology's nodes into connected components, ordered by id.
///
/// An injection point from `previous` survives iff it is still a member. When
/// several old injection points land in the same new clique, the one whose old
/// clique shares the new id wins, otherwise the lowest device id.
pub fn compute_cliques(topology: &AdHocTopology, previous: &[Clique]) -> Vec<Clique> {
    let nodes: Vec<DeviceId> = topology.nodes().collect();
    let index: BTreeMap<DeviceId, usize> = nodes.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    let mut uf = UnionFind::<usize>::new(nodes.len());
    for (a, b) in topology.edges() {
        uf.union(index[&a], index[&b]);
    }
    let mut groups: BTreeMap<usize, BTreeSet<DeviceId>> = BTreeMap::new();
    for (i, &d) in nodes.iter().enumerate() {
        groups.entry(uf.find(i)).or_default().insert(d);
    }

    let mut cliques: Vec<Clique> = groups
        .into_values()
        .map(|members| {
            let id = CliqueId::from(*members.iter().next().expect("component is non-empty"));
            let same_id = previous
                .iter()
                .find(|c| c.id == id)
                .and_then(|c| c.injection_point)
                .filter(|ip| members.contains(ip));
            let injection_point = same_id.or_else(|| {
                previous
                    .iter()
                    .filter_map(|c| c.injection_point)
                    .filter(|ip| members.contains(ip))
                    .min()
            });
            Clique { id, members, injection_point }
        })
        .collect();
    cliques.sort_by_key(|c| c.id);
    cliques
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u32]) -> Vec<DeviceId> {
        v.iter().map(|&i| DeviceId(i)).collect()
    }

    #[test]
    fn isolated_device_is_singleton() {
        let t = AdHocTopology::from_edges(ids(&[4]), &[]);
        let c = compute_cliques(&t, &[]);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].id, CliqueId(4));
        assert_eq!(c[0].members.len(), 1);
    }

    #[test]
    fn path_is_one_clique() {
        let n = ids(&[3, 1, 2]);
        let t = AdHocTopology::from_edges(n.clone(), &[(n[0], n[2]), (n[2], n[1])]);
        let c = compute_cliques(&t, &[]);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].id, CliqueId(1));
    }

    #[test]
    fn injection_point_carried_only_while_member() {
        let n = ids(&[1, 2, 3]);
        let prev = vec![Clique { id: CliqueId(1), members: n.iter().copied().collect(), injection_point: Some(DeviceId(3)) }];
        let joined = AdHocTopology::from_edges(n.clone(), &[(n[0], n[1]), (n[1], n[2])]);
        assert_eq!(compute_cliques(&joined, &prev)[0].injection_point, Some(DeviceId(3)));
        let split = AdHocTopology::from_edges(n.clone(), &[(n[0], n[1])]);
        let c = compute_cliques(&split, &prev);
        assert_eq!(c[0].injection_point, None);
        assert_eq!(c[1].id, CliqueId(3));
        assert_eq!(c[1].injection_point, Some(DeviceId(3)));
    }

    #[test]
    fn merge_prefers_same_id_clique() {
        let n = ids(&[1, 2, 3, 4]);
        let prev = vec![
            Clique { id: CliqueId(1), members: ids(&[1, 2]).into_iter().collect(), injection_point: Some(DeviceId(2)) },
            Clique { id: CliqueId(3), members: ids(&[3, 4]).into_iter().collect(), injection_point: Some(DeviceId(3)) },
        ];
        let t = AdHocTopology::from_edges(n.clone(), &[(n[0], n[1]), (n[1], n[2]), (n[2], n[3])]);
        assert_eq!(compute_cliques(&t, &prev)[0].injection_point, Some(DeviceId(2)));
    }
}
