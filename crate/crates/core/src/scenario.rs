//! Scenario files: a single JSON document describing devices, services,
//! demands and scripted protocol actions for one run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consistency::{Priority, Profile, Scope};
use crate::cost::CostModel;
use crate::election::ScoreWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Injection,
    PureBackbone,
    PureAdhoc,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Injection => "injection",
            Mode::PureBackbone => "pure_backbone",
            Mode::PureAdhoc => "pure_adhoc",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "injection" => Ok(Mode::Injection),
            "pure_backbone" => Ok(Mode::PureBackbone),
            "pure_adhoc" => Ok(Mode::PureAdhoc),
            _ => Err(format!("unknown mode `{s}` (expected injection, pure_backbone or pure_adhoc)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Area {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Area {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        Area { min, max }
    }

    fn is_valid(&self) -> bool {
        self.min.iter().chain(&self.max).all(|v| v.is_finite()) && self.min[0] < self.max[0] && self.min[1] < self.max[1]
    }

    fn contains(&self, p: [f64; 2]) -> bool {
        (self.min[0]..=self.max[0]).contains(&p[0]) && (self.min[1]..=self.max[1]).contains(&p[1])
    }

    fn within(&self, outer: &Area) -> bool {
        outer.contains(self.min) && outer.contains(self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    #[serde(default = "d_backbone_cost")]
    pub backbone_msg: u64,
    #[serde(default = "d_adhoc_cost")]
    pub adhoc_msg: u64,
    #[serde(default = "d_backbone_energy")]
    pub backbone_energy: f64,
    #[serde(default = "d_adhoc_energy")]
    pub adhoc_energy: f64,
}

impl Default for CostSpec {
    fn default() -> Self {
        let m = CostModel::default();
        CostSpec {
            backbone_msg: m.backbone_msg_cost,
            adhoc_msg: m.adhoc_msg_cost,
            backbone_energy: m.backbone_energy,
            adhoc_energy: m.adhoc_energy,
        }
    }
}

impl CostSpec {
    pub fn model(&self) -> CostModel {
        CostModel {
            backbone_msg_cost: self.backbone_msg,
            adhoc_msg_cost: self.adhoc_msg,
            backbone_energy: self.backbone_energy,
            adhoc_energy: self.adhoc_energy,
        }
    }
}

/// One-way message latencies in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencySpec {
    #[serde(default = "d_backbone_latency")]
    pub backbone: f64,
    #[serde(default = "d_adhoc_latency")]
    pub adhoc: f64,
}

impl Default for LatencySpec {
    fn default() -> Self {
        LatencySpec { backbone: d_backbone_latency(), adhoc: d_adhoc_latency() }
    }
}

/// A device, or `count` identical devices with consecutive ids starting at `id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub id: u32,
    #[serde(default = "d_count")]
    pub count: u32,
    /// Fixed start position. Without it devices spawn uniformly in `spawn`
    /// (or the scenario bounds).
    #[serde(default)]
    pub position: Option<[f64; 2]>,
    #[serde(default)]
    pub spawn: Option<Area>,
    /// `[min, max]` in m/s; `[0, 0]` is stationary.
    #[serde(default)]
    pub speed: [f64; 2],
    #[serde(default)]
    pub pause: f64,
    #[serde(default = "d_one")]
    pub battery: f64,
    #[serde(default = "d_range")]
    pub range: f64,
    #[serde(default)]
    pub backbone: bool,
    #[serde(default = "d_one")]
    pub equipment: f64,
    #[serde(default)]
    pub load: u32,
    #[serde(default)]
    pub arrive: Option<f64>,
    #[serde(default)]
    pub depart: Option<f64>,
    /// Services registered with at start (backbone-capable devices only).
    #[serde(default)]
    pub register: Vec<String>,
}

impl DeviceSpec {
    pub fn new(id: u32) -> Self {
        DeviceSpec {
            id,
            count: 1,
            position: None,
            spawn: None,
            speed: [0.0, 0.0],
            pause: 0.0,
            battery: 1.0,
            range: d_range(),
            backbone: false,
            equipment: 1.0,
            load: 0,
            arrive: None,
            depart: None,
            register: Vec::new(),
        }
    }

    pub fn at(id: u32, x: f64, y: f64) -> Self {
        DeviceSpec { position: Some([x, y]), ..Self::new(id) }
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> {
        self.id..self.id.saturating_add(self.count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProduceSpec {
    /// Explicit production times.
    #[serde(default)]
    pub at: Vec<f64>,
    /// Periodic production starting at `start`.
    #[serde(default)]
    pub every: Option<f64>,
    #[serde(default)]
    pub start: f64,
}

impl Default for ProduceSpec {
    fn default() -> Self {
        ProduceSpec { at: vec![0.0], every: None, start: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemSpec {
    pub id: String,
    /// Producing device; absent means the item originates on the backbone.
    #[serde(default)]
    pub origin: Option<u32>,
    #[serde(default = "d_staleness")]
    pub max_staleness: f64,
    #[serde(default)]
    pub priority: Priority,
    #[serde(default)]
    pub scope: Scope,
    #[serde(default)]
    pub produce: ProduceSpec,
    /// Backbone-origin items only: push every new version to registered devices.
    #[serde(default)]
    pub push_on_update: bool,
}

impl ItemSpec {
    pub fn new(id: &str) -> Self {
        ItemSpec {
            id: id.to_string(),
            origin: None,
            max_staleness: d_staleness(),
            priority: Priority::Normal,
            scope: Scope::Global,
            produce: ProduceSpec::default(),
            push_on_update: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSpec {
    pub id: String,
    #[serde(default)]
    pub items: Vec<ItemSpec>,
}

/// The same requirement declared by every listed seeker. Explicit bounds
/// override the profile's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequirementSpec {
    pub seekers: Vec<u32>,
    pub item: String,
    #[serde(default)]
    pub profile: Option<Profile>,
    #[serde(default)]
    pub max_age: Option<f64>,
    #[serde(default)]
    pub max_wait: Option<f64>,
    #[serde(default)]
    pub declare_at: f64,
}

impl RequirementSpec {
    /// `(max_tolerated_age, max_wait)`, if fully specified.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        let (pa, pw) = self.profile.map(Profile::bounds).unzip();
        Some((self.max_age.or(pa)?, self.max_wait.or(pw)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoFenceSpec {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub service: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Register,
    Request,
    Push,
    EntityFetch,
    CliqueInject,
    ForcedCliqueInject,
    WormholeDirect,
    WormholeMediated,
    Kill,
    Produce,
}

impl ActionKind {
    /// `(needs device, needs to, needs item, needs service)`
    fn needs(self) -> (bool, bool, bool, bool) {
        match self {
            ActionKind::Register => (true, false, false, true),
            ActionKind::Request
            | ActionKind::EntityFetch
            | ActionKind::CliqueInject
            | ActionKind::ForcedCliqueInject
            | ActionKind::WormholeMediated => (true, false, true, false),
            ActionKind::Push | ActionKind::Produce => (false, false, true, false),
            ActionKind::WormholeDirect => (true, true, true, false),
            ActionKind::Kill => (true, false, false, false),
        }
    }
}

/// A scripted protocol action at a fixed time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSpec {
    pub at: f64,
    #[serde(rename = "do")]
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service: Option<String>,
}

impl ActionSpec {
    pub fn new(at: f64, kind: ActionKind) -> Self {
        ActionSpec { at, kind, device: None, to: None, item: None, service: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Seconds of simulated time.
    pub duration: f64,
    #[serde(default = "d_one")]
    pub tick: f64,
    pub bounds: Area,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "d_fanout")]
    pub fanout: usize,
    #[serde(default = "d_hysteresis")]
    pub hysteresis: f64,
    /// Dwell-time normalization horizon for injection point scoring, seconds.
    #[serde(default = "d_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub weights: ScoreWeights,
    #[serde(default)]
    pub costs: CostSpec,
    #[serde(default)]
    pub latency: LatencySpec,
    #[serde(default = "d_registry_ttl")]
    pub registry_ttl: f64,
    #[serde(default = "d_relay_timeout")]
    pub relay_timeout: f64,
    /// Graph metrics are sampled every this many ticks.
    #[serde(default = "d_sample_every")]
    pub sample_every: u64,
    pub devices: Vec<DeviceSpec>,
    #[serde(default)]
    pub services: Vec<ServiceSpec>,
    #[serde(default)]
    pub requirements: Vec<RequirementSpec>,
    #[serde(default)]
    pub geo_fences: Vec<GeoFenceSpec>,
    #[serde(default)]
    pub actions: Vec<ActionSpec>,
}

fn d_one() -> f64 {
    1.0
}
fn d_count() -> u32 {
    1
}
fn d_range() -> f64 {
    10.0
}
fn d_fanout() -> usize {
    3
}
fn d_hysteresis() -> f64 {
    0.15
}
fn d_horizon() -> f64 {
    600.0
}
fn d_staleness() -> f64 {
    60.0
}
fn d_registry_ttl() -> f64 {
    300.0
}
fn d_relay_timeout() -> f64 {
    2.0
}
fn d_sample_every() -> u64 {
    10
}
fn d_backbone_cost() -> u64 {
    100
}
fn d_adhoc_cost() -> u64 {
    1
}
fn d_backbone_energy() -> f64 {
    1e-3
}
fn d_adhoc_energy() -> f64 {
    1e-4
}
fn d_backbone_latency() -> f64 {
    0.5
}
fn d_adhoc_latency() -> f64 {
    0.05
}

impl Scenario {
    /// A scenario with default parameters and no content.
    pub fn new(name: &str, duration: f64, bounds: Area) -> Self {
        Scenario {
            name: name.to_string(),
            seed: 0,
            duration,
            tick: 1.0,
            bounds,
            mode: Mode::Injection,
            fanout: d_fanout(),
            hysteresis: d_hysteresis(),
            horizon: d_horizon(),
            weights: ScoreWeights::default(),
            costs: CostSpec::default(),
            latency: LatencySpec::default(),
            registry_ttl: d_registry_ttl(),
            relay_timeout: d_relay_timeout(),
            sample_every: d_sample_every(),
            devices: Vec::new(),
            services: Vec::new(),
            requirements: Vec::new(),
            geo_fences: Vec::new(),
            actions: Vec::new(),
        }
    }

    pub fn device_count(&self) -> usize {
        self.devices.iter().map(|d| d.count as usize).sum()
    }

    pub fn items(&self) -> impl Iterator<Item = (&ServiceSpec, &ItemSpec)> {
        self.services.iter().flat_map(|s| s.items.iter().map(move |i| (s, i)))
    }

    pub fn item(&self, id: &str) -> Option<&ItemSpec> {
        self.items().find(|(_, i)| i.id == id).map(|(_, i)| i)
    }

    /// Number of (seeker, item) requirement pairs.
    pub fn requirement_count(&self) -> usize {
        let pairs: BTreeSet<(u32, &str)> =
            self.requirements.iter().flat_map(|r| r.seekers.iter().map(move |&s| (s, r.item.as_str()))).collect();
        pairs.len()
    }

    /// Checks every reference and range. Issues carry the key path but no line;
    /// `parse_scenario` attaches lines.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let issues = validate(self);
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(issues))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Issue {
    /// Dotted key path such as `devices[2].range`.
    pub key: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: `{}`: {}", self.key, self.message),
            None => write!(f, "`{}`: {}", self.key, self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("{}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Issue>),
}

impl ScenarioError {
    pub fn issues(&self) -> &[Issue] {
        match self {
            ScenarioError::Invalid(v) => v,
            ScenarioError::Syntax { .. } => &[],
        }
    }
}

fn id_ok(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b"_-.:/".contains(&b))
}

struct Checker {
    issues: Vec<Issue>,
}

impl Checker {
    fn fail(&mut self, key: impl Into<String>, message: impl Into<String>) {
        self.issues.push(Issue { key: key.into(), line: None, message: message.into() });
    }

    fn check(&mut self, ok: bool, key: impl Into<String>, message: impl Into<String>) {
        if !ok {
            self.fail(key, message);
        }
    }

    fn positive(&mut self, v: f64, key: impl Into<String>) {
        self.check(v.is_finite() && v > 0.0, key, format!("must be a positive number (got {v})"));
    }

    fn non_negative(&mut self, v: f64, key: impl Into<String>) {
        self.check(v.is_finite() && v >= 0.0, key, format!("must be a non-negative number (got {v})"));
    }

    fn unit(&mut self, v: f64, key: impl Into<String>) {
        self.check((0.0..=1.0).contains(&v), key, format!("must lie in [0, 1] (got {v})"));
    }
}

fn validate(s: &Scenario) -> Vec<Issue> {
    let mut c = Checker { issues: Vec::new() };
    c.check(id_ok(&s.name), "name", "must be a non-empty identifier ([A-Za-z0-9_-.:/])");
    c.non_negative(s.duration, "duration");
    c.positive(s.tick, "tick");
    c.check(s.bounds.is_valid(), "bounds", "min must be below max on both axes");
    c.check(s.fanout >= 1, "fanout", "must be at least 1");
    c.non_negative(s.hysteresis, "hysteresis");
    c.positive(s.horizon, "horizon");
    if let Err(e) = s.weights.validate() {
        c.fail("weights", e);
    }
    if let Err(e) = s.costs.model().validate() {
        c.fail("costs", e.to_string());
    }
    c.positive(s.latency.backbone, "latency.backbone");
    c.non_negative(s.latency.adhoc, "latency.adhoc");
    c.positive(s.registry_ttl, "registry_ttl");
    c.positive(s.relay_timeout, "relay_timeout");
    c.check(s.sample_every >= 1, "sample_every", "must be at least 1");

    let services: BTreeSet<&str> = s.services.iter().map(|x| x.id.as_str()).collect();
    let mut device_ids = BTreeSet::new();
    for (i, d) in s.devices.iter().enumerate() {
        let k = |f: &str| format!("devices[{i}].{f}");
        c.check(d.count >= 1, k("count"), "must be at least 1");
        for id in d.ids() {
            if !device_ids.insert(id) {
                c.fail(k("id"), format!("device id {id} is declared twice"));
                break;
            }
        }
        if let Some(p) = d.position {
            c.check(s.bounds.contains(p), k("position"), "must lie inside bounds");
        }
        if let Some(a) = &d.spawn {
            c.check(a.is_valid() && a.within(&s.bounds), k("spawn"), "must be a valid area inside bounds");
        }
        c.check(
            d.speed.iter().all(|v| v.is_finite() && *v >= 0.0) && d.speed[0] <= d.speed[1],
            k("speed"),
            "must be [min, max] with 0 <= min <= max",
        );
        c.non_negative(d.pause, k("pause"));
        c.unit(d.battery, k("battery"));
        c.positive(d.range, k("range"));
        c.unit(d.equipment, k("equipment"));
        if let Some(a) = d.arrive {
            c.check(a.is_finite() && a >= 0.0, k("arrive"), "must be a non-negative time");
        }
        if let Some(t) = d.depart {
            c.check(t.is_finite() && t > d.arrive.unwrap_or(0.0), k("depart"), "must come after arrival");
        }
        for (j, svc) in d.register.iter().enumerate() {
            c.check(services.contains(svc.as_str()), format!("devices[{i}].register[{j}]"), format!("unknown service `{svc}`"));
        }
    }

    let mut seen_services = BTreeSet::new();
    let mut items = BTreeSet::new();
    for (i, svc) in s.services.iter().enumerate() {
        c.check(id_ok(&svc.id), format!("services[{i}].id"), "must be a non-empty identifier");
        c.check(seen_services.insert(svc.id.as_str()), format!("services[{i}].id"), format!("service `{}` declared twice", svc.id));
        for (j, it) in svc.items.iter().enumerate() {
            let k = |f: &str| format!("services[{i}].items[{j}].{f}");
            c.check(id_ok(&it.id), k("id"), "must be a non-empty identifier");
            c.check(items.insert(it.id.as_str()), k("id"), format!("item `{}` declared twice", it.id));
            if let Some(o) = it.origin {
                c.check(device_ids.contains(&o), k("origin"), format!("unknown device {o}"));
                c.check(!it.push_on_update, k("push_on_update"), "only backbone-origin items can be pushed");
            } else {
                c.check(it.scope == Scope::Global, k("scope"), "backbone-origin items must be global");
            }
            c.positive(it.max_staleness, k("max_staleness"));
            for (n, t) in it.produce.at.iter().enumerate() {
                c.non_negative(*t, format!("services[{i}].items[{j}].produce.at[{n}]"));
            }
            if let Some(e) = it.produce.every {
                c.positive(e, k("produce.every"));
            }
            c.non_negative(it.produce.start, k("produce.start"));
        }
    }

    for (i, r) in s.requirements.iter().enumerate() {
        let k = |f: &str| format!("requirements[{i}].{f}");
        c.check(!r.seekers.is_empty(), k("seekers"), "must list at least one device");
        for (j, d) in r.seekers.iter().enumerate() {
            c.check(device_ids.contains(d), format!("requirements[{i}].seekers[{j}]"), format!("unknown device {d}"));
        }
        c.check(items.contains(r.item.as_str()), k("item"), format!("unknown item `{}`", r.item));
        match r.bounds() {
            Some((age, wait)) => {
                c.positive(age, k("max_age"));
                c.non_negative(wait, k("max_wait"));
            }
            None => c.fail(k("max_age"), "give a profile or both max_age and max_wait"),
        }
        c.non_negative(r.declare_at, k("declare_at"));
    }

    for (i, g) in s.geo_fences.iter().enumerate() {
        let area = Area::new(g.min, g.max);
        c.check(area.is_valid(), format!("geo_fences[{i}].min"), "min must be below max on both axes");
        c.check(services.contains(g.service.as_str()), format!("geo_fences[{i}].service"), format!("unknown service `{}`", g.service));
    }

    for (i, a) in s.actions.iter().enumerate() {
        let k = |f: &str| format!("actions[{i}].{f}");
        c.check(a.at.is_finite() && (0.0..=s.duration).contains(&a.at), k("at"), "must lie within [0, duration]");
        let (dev, to, item, svc) = a.kind.needs();
        for (need, present, field) in [
            (dev, a.device.is_some(), "device"),
            (to, a.to.is_some(), "to"),
            (item, a.item.is_some(), "item"),
            (svc, a.service.is_some(), "service"),
        ] {
            if need && !present {
                c.fail(k(field), "is required for this action");
            } else if !need && present {
                c.fail(k(field), "is not used by this action");
            }
        }
        for (v, field) in [(a.device, "device"), (a.to, "to")] {
            if let Some(d) = v {
                c.check(device_ids.contains(&d), k(field), format!("unknown device {d}"));
            }
        }
        if let Some(it) = &a.item {
            c.check(items.contains(it.as_str()), k("item"), format!("unknown item `{it}`"));
        }
        if let Some(svc) = &a.service {
            c.check(services.contains(svc.as_str()), k("service"), format!("unknown service `{svc}`"));
        }
    }
    c.issues
}

/// `devices[2].range` → `/devices/2/range`
fn json_pointer(key: &str) -> String {
    let mut p = String::new();
    for part in key.split('.') {
        let (name, rest) = part.split_once('[').map_or((part, ""), |(n, r)| (n, r));
        p.push('/');
        p.push_str(name);
        for idx in rest.split('[') {
            let idx = idx.trim_end_matches(']');
            if !idx.is_empty() {
                p.push('/');
                p.push_str(idx);
            }
        }
    }
    p
}

fn line_of(text: &str, offset: usize) -> usize {
    text.as_bytes()[..offset.min(text.len())].iter().filter(|&&b| b == b'\n').count() + 1
}

/// Finds the line of `key`, falling back to the nearest enclosing value that
/// is present in the text (defaulted keys have no span of their own).
fn locate(root: &json_spanned_value::spanned::Value, text: &str, key: &str) -> usize {
    let mut ptr = json_pointer(key);
    loop {
        if let Some(v) = root.pointer(&ptr) {
            return line_of(text, v.start());
        }
        match ptr.rfind('/') {
            Some(0) | None => return 1,
            Some(i) => ptr.truncate(i),
        }
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let scenario: Scenario = match serde_path_to_error::deserialize(de) {
        Ok(s) => s,
        Err(e) => {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if inner.is_data() {
                let key = if path == "." { "<root>".to_string() } else { path };
                return Err(ScenarioError::Invalid(vec![Issue { key, line: Some(inner.line()), message: strip_position(&inner) }]));
            }
            return Err(ScenarioError::Syntax { line: inner.line(), column: inner.column(), message: strip_position(&inner) });
        }
    };
    let issues = validate(&scenario);
    if issues.is_empty() {
        return Ok(scenario);
    }
    let root: json_spanned_value::spanned::Value = json_spanned_value::from_str(text).map_err(|e| ScenarioError::Syntax {
        line: e.line(),
        column: e.column(),
        message: strip_position(&e),
    })?;
    Err(ScenarioError::Invalid(
        issues.into_iter().map(|i| Issue { line: Some(locate(&root, text, &i.key)), ..i }).collect(),
    ))
}

fn strip_position(e: &serde_json::Error) -> String {
    let s = e.to_string();
    match s.rfind(" at line ") {
        Some(i) => s[..i].to_string(),
        None => s,
    }
}

pub fn render_scenario(s: &Scenario) -> String {
    let mut out = serde_json::to_string_pretty(s).expect("scenario serializes");
    out.push('\n');
    out
}

/// Device ids of a scenario mapped to their spec.
pub fn device_index(s: &Scenario) -> BTreeMap<u32, &DeviceSpec> {
    s.devices.iter().flat_map(|d| d.ids().map(move |id| (id, d))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
  "name": "minimal",
  "duration": 10,
  "bounds": {"min": [0, 0], "max": [100, 100]},
  "devices": [{"id": 1, "position": [5, 5]}],
  "services": [{"id": "news", "items": [{"id": "headline"}]}]
}"#;

    #[test]
    fn minimal_parses_with_defaults() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.tick, 1.0);
        assert_eq!(s.fanout, 3);
        assert_eq!(s.costs.backbone_msg, 100);
        assert_eq!(s.devices[0].range, 10.0);
        assert_eq!(s.services[0].items[0].produce.at, vec![0.0]);
    }

    #[test]
    fn render_round_trips() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(parse_scenario(&render_scenario(&s)).unwrap(), s);
    }

    #[test]
    fn unknown_service_names_key_and_line() {
        let text = MINIMAL.replace(r#""position": [5, 5]}"#, r#""position": [5, 5], "register": ["weather"]}"#);
        let err = parse_scenario(&text).unwrap_err();
        let issue = &err.issues()[0];
        assert_eq!(issue.key, "devices[0].register[0]");
        assert_eq!(issue.line, Some(5));
        assert!(issue.message.contains("weather"));
    }

    #[test]
    fn defaulted_key_reports_enclosing_line() {
        let text = MINIMAL.replace(r#""id": 1, "position": [5, 5]"#, r#""id": 1, "position": [500, 5]"#);
        let err = parse_scenario(&text).unwrap_err();
        assert_eq!(err.issues()[0].key, "devices[0].position");
        assert_eq!(err.issues()[0].line, Some(5));
    }

    #[test]
    fn type_errors_name_the_key() {
        let text = MINIMAL.replace(r#""duration": 10"#, r#""duration": "long""#);
        let err = parse_scenario(&text).unwrap_err();
        assert_eq!(err.issues()[0].key, "duration");
        assert_eq!(err.issues()[0].line, Some(3));
    }

    #[test]
    fn unknown_field_rejected() {
        let text = MINIMAL.replace(r#""duration": 10"#, r#""duraton": 10"#);
        assert!(matches!(parse_scenario(&text), Err(ScenarioError::Invalid(_))));
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_scenario("{\n  \"name\": \n}").unwrap_err();
        assert!(matches!(err, ScenarioError::Syntax { line: 3, .. }), "{err}");
    }

    #[test]
    fn action_fields_checked_per_kind() {
        let mut s = parse_scenario(MINIMAL).unwrap();
        s.actions.push(ActionSpec { item: Some("headline".into()), ..ActionSpec::new(1.0, ActionKind::WormholeDirect) });
        let err = s.validate().unwrap_err();
        let keys: Vec<&str> = err.issues().iter().map(|i| i.key.as_str()).collect();
        assert_eq!(keys, vec!["actions[0].device", "actions[0].to"]);
    }

    #[test]
    fn pointer_conversion() {
        assert_eq!(json_pointer("devices[2].register[0]"), "/devices/2/register/0");
        assert_eq!(json_pointer("latency.backbone"), "/latency/backbone");
    }

    #[test]
    fn requirement_bounds_from_profile_or_explicit() {
        let r = RequirementSpec {
            seekers: vec![1],
            item: "x".into(),
            profile: Some(Profile::Business),
            max_age: Some(10.0),
            max_wait: None,
            declare_at: 0.0,
        };
        assert_eq!(r.bounds(), Some((10.0, 5.0)));
        assert_eq!(RequirementSpec { profile: None, ..r }.bounds(), None);
    }
}
