#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::PathBuf;

use injsim::audit::audit_text;
use injsim::engine::RunOutput;
use injsim::ids::DeviceId;
use injsim::scenario::{parse_scenario, Area, DeviceSpec, ItemSpec, RequirementSpec, Scenario, ServiceSpec};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

pub fn load_fixture(name: &str) -> Scenario {
    let text = std::fs::read_to_string(fixture_dir().join(format!("{name}.json"))).expect("fixture readable");
    parse_scenario(&text).expect("fixture parses")
}

pub const SUITE: [&str; 3] = ["bus-stop", "learning-groups", "partition-stress"];

pub fn requirement(seekers: impl IntoIterator<Item = u32>, item: &str, max_age: f64, max_wait: f64) -> RequirementSpec {
    RequirementSpec {
        seekers: seekers.into_iter().collect(),
        item: item.to_string(),
        profile: None,
        max_age: Some(max_age),
        max_wait: Some(max_wait),
        declare_at: 0.0,
    }
}

pub fn service(id: &str, items: Vec<ItemSpec>) -> ServiceSpec {
    ServiceSpec { id: id.to_string(), items }
}

/// `n` stationary devices within radio range of each other, ids 1..=n.
pub fn huddle(n: u32, capable: bool) -> Vec<DeviceSpec> {
    (1..=n)
        .map(|i| {
            let angle = f64::from(i) * 0.7;
            DeviceSpec { backbone: capable, ..DeviceSpec::at(i, 50.0 + 3.0 * angle.cos(), 50.0 + 3.0 * angle.sin()) }
        })
        .collect()
}

/// A static clique of `n` capable devices that all want one backbone item.
pub fn dedup_scenario(n: u32) -> Scenario {
    let mut s = Scenario::new(&format!("dedup-{n}"), 20.0, Area::new([0.0, 0.0], [100.0, 100.0]));
    s.devices = huddle(n, true);
    s.services = vec![service("news", vec![ItemSpec::new("headline")])];
    s.requirements = vec![requirement(1..=n, "headline", 1000.0, 0.5)];
    s
}

pub fn audit_output(out: &RunOutput) -> injsim::audit::AuditReport {
    audit_text(&out.trace_text(), &out.metrics.to_csv()).expect("artifacts parse")
}

/// Connected components by breadth-first search over an edge list.
pub fn bfs_components(nodes: &BTreeSet<DeviceId>, edges: &[(DeviceId, DeviceId)]) -> BTreeSet<BTreeSet<DeviceId>> {
    let mut adj: BTreeMap<DeviceId, Vec<DeviceId>> = nodes.iter().map(|&n| (n, Vec::new())).collect();
    for &(a, b) in edges {
        adj.get_mut(&a).unwrap().push(b);
        adj.get_mut(&b).unwrap().push(a);
    }
    let mut seen = BTreeSet::new();
    let mut out = BTreeSet::new();
    for &start in nodes {
        if !seen.insert(start) {
            continue;
        }
        let mut comp = BTreeSet::from([start]);
        let mut q = VecDeque::from([start]);
        while let Some(u) = q.pop_front() {
            for &v in &adj[&u] {
                if seen.insert(v) {
                    comp.insert(v);
                    q.push_back(v);
                }
            }
        }
        out.insert(comp);
    }
    out
}

/// Hop distances from `src` by breadth-first search; unreachable nodes are absent.
pub fn bfs_distances(src: DeviceId, edges: &[(DeviceId, DeviceId)]) -> BTreeMap<DeviceId, usize> {
    let mut adj: BTreeMap<DeviceId, Vec<DeviceId>> = BTreeMap::new();
    for &(a, b) in edges {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    let mut dist = BTreeMap::from([(src, 0)]);
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        for &v in adj.get(&u).map(Vec::as_slice).unwrap_or(&[]) {
            if !dist.contains_key(&v) {
                dist.insert(v, dist[&u] + 1);
                q.push_back(v);
            }
        }
    }
    dist
}
