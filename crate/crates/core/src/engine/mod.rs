//! The simulation world: event loop, per-tick maintenance, epidemics,
//! production, and the bookkeeping that feeds the trace and metrics.

mod flows;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::consistency::{
    age_of, check_requirements, trigger_injections, ConsistencyProperties, ConsistencyRequirement, InjuryReason,
    ItemReplica, ReconcileOutcome, ReplicaStore, Scope, TargetRank,
};
use crate::cost::{graph_efficiency, hybrid_topology, CostLedger, CostModel, RunMetrics, SeriesRow};
use crate::election::{maintain_injection_point, ElectionContext, Maintenance, ScoreWeights};
use crate::epidemic::{InfectionState, InterestFilter};
use crate::ids::{CliqueId, DeviceId, Endpoint, ItemId, ServiceId};
use crate::protocol::{
    BackboneService, Hop, InjectionError, InjectionEvent, InjectionKind, InjectionStatus, MessageContext, MessageKind,
    StoredItem,
};
use crate::scenario::{ActionKind, ActionSpec, Mode, Scenario, ScenarioError};
use crate::sim::{compute_cliques, step_mobility, AdHocTopology, Clique, Device, EventQueue, MobilityParams, Point, Rect};
use crate::time::SimTime;
use crate::trace::{render_trace, InfectCause, RegisterVia, TraceRecord};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("invariant violated: {invariant}: {detail}")]
    Invariant { invariant: &'static str, detail: String },
}

fn violation(invariant: &'static str, detail: impl Into<String>) -> RunError {
    RunError::Invariant { invariant, detail: detail.into() }
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<TraceRecord>,
    pub metrics: RunMetrics,
    pub series: Vec<SeriesRow>,
    pub ledger: CostLedger,
    pub injections: Vec<InjectionEvent>,
    pub backbone: BackboneService,
}

impl RunOutput {
    pub fn trace_text(&self) -> String {
        render_trace(&self.trace)
    }

    pub fn series_text(&self) -> String {
        SeriesRow::render_all(&self.series)
    }
}

#[derive(Debug, Clone)]
struct Config {
    mode: Mode,
    tick: SimTime,
    duration: SimTime,
    bounds: Rect,
    fanout: usize,
    hysteresis: f64,
    horizon: f64,
    weights: ScoreWeights,
    costs: CostModel,
    backbone_latency: SimTime,
    adhoc_latency: SimTime,
    registry_ttl: SimTime,
    relay_timeout: SimTime,
    sample_every: u64,
}

#[derive(Debug, Clone)]
struct ItemDef {
    service: ServiceId,
    origin: Option<DeviceId>,
    properties: ConsistencyProperties,
    push_on_update: bool,
    every: Option<SimTime>,
}

#[derive(Debug, Clone)]
enum Event {
    Tick,
    Arrive(DeviceId),
    Depart(DeviceId),
    Produce(ItemId),
    Action(usize),
    GossipRound(usize),
    Flow(u64, Step),
}

/// Next step of an injection in progress.
#[derive(Debug, Clone)]
enum Step {
    /// A request reached the backbone.
    AtBackbone,
    /// The item reaches a device.
    Deliver { to: DeviceId, replica: ItemReplica },
    /// The item reached the uploading injection point, which now sends it up.
    Upload,
    UploadArrived { replica: ItemReplica },
    /// A ForceInject reached a registered device of the clique.
    Forced { registrant: DeviceId },
    /// Retry relaying a direct wormhole to its target.
    Relay { replica: ItemReplica },
    /// An error notification arrives; the injection fails.
    Fail(InjectionError),
}

#[derive(Debug, Clone)]
struct InjectionRun {
    event: InjectionEvent,
    interested: BTreeSet<DeviceId>,
    open: bool,
    /// Seed an epidemic at the receiving device on delivery.
    share: bool,
    /// Fall back to a mediated wormhole when the backbone lacks the item.
    mediate: bool,
    flight: Option<(CliqueId, ItemId)>,
    fetch: Option<(DeviceId, ItemId)>,
    /// Device that sends the item up to the backbone.
    uploader: Option<DeviceId>,
    /// Replica chosen for upload.
    replica: Option<ItemReplica>,
    /// Relay target of a direct wormhole, requester of a mediated one.
    receiver: Option<DeviceId>,
}

#[derive(Debug, Clone)]
struct EpidemicRun {
    state: InfectionState,
    produced_at: SimTime,
}

#[derive(Debug, Clone, Copy, Default)]
struct Flight {
    epidemic: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default)]
struct GraphSums {
    samples: u64,
    efficiency: f64,
    disconnected: f64,
    path: f64,
    path_samples: u64,
    hybrid: f64,
    hybrid_samples: u64,
}

/// Mutable state of one run.
pub struct World {
    name: String,
    seed: u64,
    cfg: Config,
    actions: Vec<ActionSpec>,
    geo_fences: Vec<(Rect, ServiceId)>,
    initial_registrations: BTreeMap<DeviceId, Vec<ServiceId>>,
    items: BTreeMap<ItemId, ItemDef>,
    latest: BTreeMap<ItemId, u64>,
    devices: BTreeMap<DeviceId, Device>,
    topology: AdHocTopology,
    cliques: Vec<Clique>,
    clique_index: BTreeMap<DeviceId, usize>,
    queue: EventQueue<Event>,
    backbone: BackboneService,
    replicas: ReplicaStore,
    requirements: Vec<ConsistencyRequirement>,
    seekers: BTreeSet<(DeviceId, ItemId)>,
    injured: BTreeSet<(DeviceId, ItemId)>,
    satisfied: BTreeSet<(DeviceId, ItemId)>,
    in_flight: BTreeMap<(CliqueId, ItemId), Flight>,
    /// Suppressed (clique, item) triggers: until a time, and for failures
    /// only while the topology epoch is unchanged.
    retry_after: BTreeMap<(CliqueId, ItemId), (Option<u64>, SimTime)>,
    fetching: BTreeSet<(DeviceId, ItemId)>,
    fetch_after: BTreeMap<(DeviceId, ItemId), SimTime>,
    pending_registrations: Vec<DeviceId>,
    inside_fence: BTreeSet<(usize, DeviceId)>,
    runs: Vec<InjectionRun>,
    epidemics: Vec<EpidemicRun>,
    ledger: CostLedger,
    trace: Vec<TraceRecord>,
    series: Vec<SeriesRow>,
    rng_mobility: ChaCha8Rng,
    rng_gossip: ChaCha8Rng,
    next_message: u64,
    next_election: u64,
    next_registration: u64,
    ticks: u64,
    backbone_messages: u64,
    adhoc_messages: u64,
    elections: u64,
    handovers: u64,
    registrations: u64,
    staleness_sum: f64,
    staleness_samples: u64,
    graph: GraphSums,
    fault: Option<RunError>,
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn rect(a: [f64; 2], b: [f64; 2]) -> Rect {
    Rect::new(Point::new(a[0], a[1]), Point::new(b[0], b[1]))
}

fn secs(s: f64) -> SimTime {
    SimTime::from_secs_f64(s)
}

impl World {
    pub fn new(scenario: &Scenario) -> Result<World, RunError> {
        scenario.validate()?;
        let s = scenario;
        let cfg = Config {
            mode: s.mode,
            tick: secs(s.tick),
            duration: secs(s.duration),
            bounds: rect(s.bounds.min, s.bounds.max),
            fanout: s.fanout,
            hysteresis: s.hysteresis,
            horizon: s.horizon,
            weights: s.weights,
            costs: s.costs.model(),
            backbone_latency: secs(s.latency.backbone),
            adhoc_latency: secs(s.latency.adhoc),
            registry_ttl: secs(s.registry_ttl),
            relay_timeout: secs(s.relay_timeout),
            sample_every: s.sample_every,
        };
        let mut rng_spawn = rng_stream(s.seed, 3);
        let mut devices = BTreeMap::new();
        let mut initial_registrations = BTreeMap::new();
        let mut queue = EventQueue::new();
        queue.schedule(SimTime::ZERO, Event::Tick).expect("queue starts at zero");
        for spec in &s.devices {
            for id in spec.ids() {
                let id = DeviceId(id);
                let area = spec.spawn.map_or(cfg.bounds, |a| rect(a.min, a.max));
                let pos = match spec.position {
                    Some(p) => Point::new(p[0], p[1]),
                    None => Point::new(
                        rng_spawn.gen_range(area.min.x..=area.max.x),
                        rng_spawn.gen_range(area.min.y..=area.max.y),
                    ),
                };
                let mut d = Device::new(id, pos);
                d.battery = spec.battery;
                d.radio_range = spec.range;
                d.backbone_capable = spec.backbone;
                d.equipment_score = spec.equipment;
                d.load = spec.load;
                d.mobility = MobilityParams { speed_min: spec.speed[0], speed_max: spec.speed[1], pause: spec.pause };
                d.expected_departure = spec.depart.map(secs);
                let arrive = spec.arrive.map(secs).unwrap_or(SimTime::ZERO);
                if arrive > SimTime::ZERO {
                    d.present = false;
                    if arrive <= cfg.duration {
                        queue.schedule(arrive, Event::Arrive(id)).expect("future");
                    }
                }
                if let Some(dep) = d.expected_departure.filter(|t| *t <= cfg.duration) {
                    queue.schedule(dep, Event::Depart(id)).expect("future");
                }
                if !spec.register.is_empty() {
                    initial_registrations.insert(id, spec.register.iter().map(|r| ServiceId::new(r.as_str())).collect());
                }
                devices.insert(id, d);
            }
        }

        let mut items = BTreeMap::new();
        for svc in &s.services {
            for it in &svc.items {
                let id = ItemId::new(it.id.as_str());
                items.insert(
                    id.clone(),
                    ItemDef {
                        service: ServiceId::new(svc.id.as_str()),
                        origin: it.origin.map(DeviceId),
                        properties: ConsistencyProperties {
                            max_staleness: it.max_staleness,
                            priority: it.priority,
                            scope: it.scope,
                        },
                        push_on_update: it.push_on_update,
                        every: it.produce.every.map(secs),
                    },
                );
                let mut times: BTreeSet<SimTime> = it.produce.at.iter().map(|&t| secs(t)).collect();
                if it.produce.every.is_some() {
                    times.insert(secs(it.produce.start));
                }
                for t in times.into_iter().filter(|t| *t <= cfg.duration) {
                    queue.schedule(t, Event::Produce(id.clone())).expect("future");
                }
            }
        }

        let mut requirements = Vec::new();
        let mut seekers = BTreeSet::new();
        for r in &s.requirements {
            let (age, wait) = r.bounds().expect("validated");
            for &seeker in &r.seekers {
                let arrive = devices.get(&DeviceId(seeker)).map_or(0.0, |_| {
                    s.devices.iter().find(|d| d.ids().any(|i| i == seeker)).and_then(|d| d.arrive).unwrap_or(0.0)
                });
                let item = ItemId::new(r.item.as_str());
                seekers.insert((DeviceId(seeker), item.clone()));
                requirements.push(ConsistencyRequirement {
                    seeker: DeviceId(seeker),
                    item,
                    max_tolerated_age: age,
                    max_wait: wait,
                    declared_at: secs(r.declare_at.max(arrive)),
                });
            }
        }

        for (i, a) in s.actions.iter().enumerate() {
            queue.schedule(secs(a.at), Event::Action(i)).expect("future");
        }

        let pending_registrations = initial_registrations.keys().copied().collect();
        Ok(World {
            name: s.name.clone(),
            seed: s.seed,
            actions: s.actions.clone(),
            geo_fences: s.geo_fences.iter().map(|g| (rect(g.min, g.max), ServiceId::new(g.service.as_str()))).collect(),
            initial_registrations,
            items,
            latest: BTreeMap::new(),
            devices,
            topology: AdHocTopology::new(),
            cliques: Vec::new(),
            clique_index: BTreeMap::new(),
            queue,
            backbone: BackboneService::new(),
            replicas: ReplicaStore::default(),
            requirements,
            seekers,
            injured: BTreeSet::new(),
            satisfied: BTreeSet::new(),
            in_flight: BTreeMap::new(),
            retry_after: BTreeMap::new(),
            fetching: BTreeSet::new(),
            fetch_after: BTreeMap::new(),
            pending_registrations,
            inside_fence: BTreeSet::new(),
            runs: Vec::new(),
            epidemics: Vec::new(),
            ledger: CostLedger::new(),
            trace: Vec::new(),
            series: Vec::new(),
            rng_mobility: rng_stream(s.seed, 1),
            rng_gossip: rng_stream(s.seed, 2),
            next_message: 0,
            next_election: 0,
            next_registration: 0,
            ticks: 0,
            backbone_messages: 0,
            adhoc_messages: 0,
            elections: 0,
            handovers: 0,
            registrations: 0,
            staleness_sum: 0.0,
            staleness_samples: 0,
            graph: GraphSums::default(),
            fault: None,
            cfg,
        })
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn mode(&self) -> Mode {
        self.cfg.mode
    }

    pub fn devices(&self) -> &BTreeMap<DeviceId, Device> {
        &self.devices
    }

    pub fn device_mut(&mut self, id: DeviceId) -> Option<&mut Device> {
        self.devices.get_mut(&id)
    }

    pub fn topology(&self) -> &AdHocTopology {
        &self.topology
    }

    pub fn cliques(&self) -> &[Clique] {
        &self.cliques
    }

    pub fn clique_of(&self, d: DeviceId) -> Option<CliqueId> {
        self.clique_index.get(&d).map(|&i| self.cliques[i].id)
    }

    pub fn clique(&self, id: CliqueId) -> Option<&Clique> {
        self.cliques.iter().find(|c| c.id == id)
    }

    pub fn backbone(&self) -> &BackboneService {
        &self.backbone
    }

    pub fn replicas(&self) -> &ReplicaStore {
        &self.replicas
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn injection(&self, id: u64) -> Option<&InjectionEvent> {
        self.runs.get(id as usize).map(|r| &r.event)
    }

    pub fn injections(&self) -> impl Iterator<Item = &InjectionEvent> {
        self.runs.iter().map(|r| &r.event)
    }

    pub fn backbone_messages(&self) -> u64 {
        self.backbone_messages
    }

    pub fn adhoc_messages(&self) -> u64 {
        self.adhoc_messages
    }

    /// Processes every event up to and including `until` (clamped to the duration).
    pub fn run_until(&mut self, until: f64) -> Result<(), RunError> {
        let until = secs(until).min(self.cfg.duration);
        while let Some(t) = self.queue.peek_time() {
            if t > until {
                break;
            }
            let (_, ev) = self.queue.next_event().expect("peeked");
            self.dispatch(ev);
            if let Some(f) = self.fault.take() {
                return Err(f);
            }
        }
        Ok(())
    }

    /// Runs to the end of the scenario, closes open injections and summarizes.
    pub fn finish(mut self) -> Result<RunOutput, RunError> {
        self.run_until(self.cfg.duration.as_secs_f64())?;
        self.close_open_injections();
        let metrics = self.summarize();
        Ok(RunOutput {
            trace: self.trace,
            metrics,
            series: self.series,
            ledger: self.ledger,
            injections: self.runs.into_iter().map(|r| r.event).collect(),
            backbone: self.backbone,
        })
    }

    fn schedule(&mut self, at: SimTime, ev: Event) {
        if let Err(e) = self.queue.schedule(at, ev) {
            self.fault.get_or_insert(violation("event scheduled in the past", e.to_string()));
        }
    }

    fn after(&mut self, delay: SimTime, ev: Event) {
        let at = self.now() + delay;
        self.schedule(at, ev);
    }

    fn dispatch(&mut self, ev: Event) {
        match ev {
            Event::Tick => self.on_tick(),
            Event::Arrive(d) => {
                if let Some(dev) = self.devices.get_mut(&d) {
                    dev.present = true;
                }
                if self.initial_registrations.contains_key(&d) {
                    self.pending_registrations.push(d);
                }
            }
            Event::Depart(d) => {
                if let Some(dev) = self.devices.get_mut(&d) {
                    dev.present = false;
                }
            }
            Event::Produce(item) => self.produce(&item),
            Event::Action(i) => self.run_action(i),
            Event::GossipRound(e) => self.gossip_round(e),
            Event::Flow(id, step) => self.flow_step(id, step),
        }
    }

    fn backoff(&self) -> SimTime {
        self.cfg.tick.checked_mul(10).unwrap_or(self.cfg.tick)
    }

    fn alive(&self, d: DeviceId) -> bool {
        self.devices.get(&d).is_some_and(Device::is_alive)
    }

    fn capable(&self, d: DeviceId) -> bool {
        self.devices.get(&d).is_some_and(Device::can_use_backbone)
    }

    fn requirement_active(&self, r: &ConsistencyRequirement) -> bool {
        r.declared_at <= self.now() && self.alive(r.seeker)
    }

    /// Seekers with an active requirement for `item` among the clique's members.
    fn interested_in(&self, clique: CliqueId, item: &ItemId) -> BTreeSet<DeviceId> {
        let Some(c) = self.clique(clique) else { return BTreeSet::new() };
        self.requirements
            .iter()
            .filter(|r| &r.item == item && c.contains(r.seeker) && self.requirement_active(r))
            .map(|r| r.seeker)
            .collect()
    }

    /// Freshest replica of `item` among the clique's members (lowest id on ties).
    fn best_holder(&self, clique: CliqueId, item: &ItemId) -> Option<(DeviceId, ItemReplica)> {
        let c = self.clique(clique)?;
        let mut best: Option<(DeviceId, ItemReplica)> = None;
        for &m in &c.members {
            if let Some(r) = self.replicas.get(m, item) {
                if best.is_none_or(|(_, b)| r.version > b.version) {
                    best = Some((m, *r));
                }
            }
        }
        best
    }

    #[allow(clippy::too_many_arguments)]
    fn send(
        &mut self,
        context: MessageContext,
        kind: MessageKind,
        hop: Hop,
        from: Endpoint,
        to: Endpoint,
        item: Option<&ItemId>,
        version: Option<u64>,
    ) {
        let id = self.next_message;
        self.next_message += 1;
        let scope = version.and(item).and_then(|i| self.items.get(i)).map(|d| d.properties.scope);
        if hop == Hop::Backbone && scope == Some(Scope::CliqueLocal) {
            self.fault.get_or_insert(violation(
                "clique-local item on a backbone hop",
                format!("message {id} carries `{}`", item.expect("scoped")),
            ));
        }
        self.trace.push(TraceRecord::Msg {
            time: self.now(),
            id,
            context,
            kind,
            hop,
            from,
            to,
            item: item.cloned(),
            version,
            scope,
        });
        let costs = self.cfg.costs;
        let energy = match hop {
            Hop::Backbone => {
                self.backbone_messages += 1;
                costs.backbone_energy
            }
            Hop::AdHoc => {
                self.adhoc_messages += 1;
                costs.adhoc_energy
            }
        };
        if let Endpoint::Device(d) = from {
            match (hop, context) {
                (Hop::AdHoc, _) => self.ledger.charge_adhoc(d, costs.adhoc_msg_cost),
                (Hop::Backbone, MessageContext::Registration(_)) => self.ledger.charge_backbone(d, costs.backbone_msg_cost),
                _ => {}
            }
            if let Some(dev) = self.devices.get_mut(&d) {
                dev.drain(energy);
            }
            self.ledger.charge_energy(d, energy);
            if hop == Hop::Backbone {
                let clique = self.clique_of(d);
                self.backbone.touch(d, clique);
                let held: Vec<(ItemId, u64)> = self.replicas.held_by(d).map(|(i, r)| (i.clone(), r.version)).collect();
                for (i, v) in held {
                    self.backbone.note_version(d, &i, v);
                }
            }
        }
        if let MessageContext::Injection(inj) = context {
            let ev = &mut self.runs[inj as usize].event;
            match hop {
                Hop::Backbone => ev.backbone_messages += 1,
                Hop::AdHoc => ev.adhoc_messages += 1,
            }
        }
    }

    /// Offers a replica to a device and records the receipt if it upgraded the copy.
    fn receive(&mut self, device: DeviceId, item: &ItemId, replica: ItemReplica, cause: InfectCause, from: Option<Endpoint>) {
        let incoming = ItemReplica { received_at: self.now(), ..replica };
        if self.replicas.offer(device, item, incoming) != ReconcileOutcome::Upgraded {
            return;
        }
        let seeker = self.seekers.contains(&(device, item.clone()));
        if seeker {
            self.satisfied.insert((device, item.clone()));
        }
        self.trace.push(TraceRecord::Infect {
            time: self.now(),
            cause,
            item: item.clone(),
            version: replica.version,
            produced_at: replica.produced_at,
            device,
            from,
            seeker,
        });
    }

    // ---- per-tick maintenance ----

    fn on_tick(&mut self) {
        let now = self.now();
        let index = self.ticks;
        self.ticks += 1;
        if index > 0 {
            let dt = self.cfg.tick.as_secs_f64();
            step_mobility(self.devices.values_mut(), dt, &self.cfg.bounds, &mut self.rng_mobility);
        }
        self.topology.rebuild(self.devices.values());
        let previous = std::mem::take(&mut self.cliques);
        self.cliques = compute_cliques(&self.topology, &previous);
        self.clique_index.clear();
        for (i, c) in self.cliques.iter().enumerate() {
            for &m in &c.members {
                self.clique_index.insert(m, i);
            }
        }
        self.trace.push(TraceRecord::Tick {
            time: now,
            index,
            epoch: self.topology.epoch(),
            alive: self.topology.node_count(),
            cliques: self.cliques.len(),
        });
        if let Err(e) = self.check_world() {
            self.fault.get_or_insert(e);
            return;
        }

        if self.cfg.mode == Mode::Injection {
            let regs = std::mem::take(&mut self.pending_registrations);
            for d in regs {
                let services = self.initial_registrations.get(&d).cloned().unwrap_or_default();
                for s in services {
                    self.register(d, &s, RegisterVia::Manual);
                }
            }
            self.geo_fence_pass();
            self.backbone.purge(now, self.cfg.registry_ttl);
            self.maintain_injection_points(&previous);
        }
        self.consistency_pass();
        self.sample(index);
        let next = now + self.cfg.tick;
        if next <= self.cfg.duration {
            self.schedule(next, Event::Tick);
        }
    }

    fn check_world(&self) -> Result<(), RunError> {
        let members: usize = self.cliques.iter().map(Clique::len).sum();
        if members != self.topology.node_count() || self.clique_index.len() != members {
            return Err(violation("clique partition", format!("{members} members for {} alive devices", self.topology.node_count())));
        }
        for c in &self.cliques {
            if let Some(ip) = c.injection_point {
                if !c.contains(ip) {
                    return Err(violation("injection point membership", format!("{ip} not in clique {}", c.id)));
                }
            }
        }
        for d in self.devices.values() {
            if !self.cfg.bounds.contains(&d.position) {
                return Err(violation("positions within bounds", format!("device {} at ({}, {})", d.id, d.position.x, d.position.y)));
            }
        }
        Ok(())
    }

    fn geo_fence_pass(&mut self) {
        let mut entries = Vec::new();
        for (fi, (area, service)) in self.geo_fences.iter().enumerate() {
            for d in self.devices.values() {
                let inside = d.can_use_backbone() && area.contains(&d.position);
                let was = self.inside_fence.contains(&(fi, d.id));
                if inside && !was {
                    entries.push((fi, d.id, service.clone()));
                } else if !inside && was {
                    self.inside_fence.remove(&(fi, d.id));
                }
            }
        }
        for (fi, d, service) in entries {
            self.inside_fence.insert((fi, d));
            self.register(d, &service, RegisterVia::GeoFence);
        }
    }

    fn election_context(&self) -> ElectionContext<'_> {
        ElectionContext {
            devices: &self.devices,
            topology: &self.topology,
            weights: &self.cfg.weights,
            horizon: self.cfg.horizon,
            now: self.now(),
        }
    }

    fn maintain_injection_points(&mut self, previous: &[Clique]) {
        // A clique whose members were served by an injection point that is now gone lost it.
        let mut served_by: BTreeMap<DeviceId, DeviceId> = BTreeMap::new();
        for c in previous {
            if let Some(ip) = c.injection_point {
                for &m in &c.members {
                    served_by.insert(m, ip);
                }
            }
        }
        let mut interests: BTreeMap<DeviceId, BTreeSet<ItemId>> = BTreeMap::new();
        for r in &self.requirements {
            if self.requirement_active(r) {
                interests.entry(r.seeker).or_default().insert(r.item.clone());
            }
        }
        for idx in 0..self.cliques.len() {
            let clique = &self.cliques[idx];
            let lost = clique.injection_point.is_none() && clique.members.iter().any(|m| served_by.contains_key(m));
            let wanted = clique.members.iter().any(|m| interests.contains_key(m));
            if clique.injection_point.is_none() && !lost && !wanted {
                continue;
            }
            let decision = maintain_injection_point(clique, &self.election_context(), self.cfg.hysteresis);
            match decision {
                Maintenance::Keep => {}
                Maintenance::Vacant => self.cliques[idx].injection_point = None,
                Maintenance::Reelect { reason, election } => {
                    let reason = if lost { "departed" } else { reason.as_str() };
                    self.apply_election(idx, election.winner, election.score.total, reason);
                }
                Maintenance::Handover { from, old_score, election } => {
                    let id = self.next_election;
                    self.next_election += 1;
                    let clique_id = self.cliques[idx].id;
                    self.trace.push(TraceRecord::Handover {
                        time: self.now(),
                        id,
                        clique: clique_id,
                        from,
                        to: election.winner,
                        old_score,
                        new_score: election.score.total,
                    });
                    self.election_messages(idx, id, from);
                    self.cliques[idx].injection_point = Some(election.winner);
                    self.handovers += 1;
                }
            }
        }
    }

    /// Probe and reply between the coordinator and every other member.
    fn election_messages(&mut self, idx: usize, id: u64, coordinator: DeviceId) {
        let members: Vec<DeviceId> = self.cliques[idx].members.iter().copied().filter(|&m| m != coordinator).collect();
        for m in members {
            let ctx = MessageContext::Election(id);
            self.send(ctx, MessageKind::Probe, Hop::AdHoc, Endpoint::Device(coordinator), Endpoint::Device(m), None, None);
            self.send(ctx, MessageKind::Ack, Hop::AdHoc, Endpoint::Device(m), Endpoint::Device(coordinator), None, None);
        }
    }

    fn apply_election(&mut self, idx: usize, winner: DeviceId, score: f64, reason: &str) {
        let id = self.next_election;
        self.next_election += 1;
        let c = &self.cliques[idx];
        self.trace.push(TraceRecord::Elect {
            time: self.now(),
            id,
            clique: c.id,
            winner,
            score,
            members: c.len(),
            reason: reason.to_string(),
        });
        let coordinator = *c.members.iter().next().expect("non-empty clique");
        self.election_messages(idx, id, coordinator);
        self.cliques[idx].injection_point = Some(winner);
        self.elections += 1;
    }

    /// The clique's injection point, electing one if it has none or it can no longer serve.
    fn ensure_injection_point(&mut self, clique: CliqueId) -> Option<DeviceId> {
        let idx = self.cliques.iter().position(|c| c.id == clique)?;
        if let Some(ip) = self.cliques[idx].injection_point {
            if self.capable(ip) {
                return Some(ip);
            }
        }
        match maintain_injection_point(&self.cliques[idx], &self.election_context(), self.cfg.hysteresis) {
            Maintenance::Reelect { reason, election } => {
                self.apply_election(idx, election.winner, election.score.total, reason.as_str());
                Some(election.winner)
            }
            _ => {
                self.cliques[idx].injection_point = None;
                None
            }
        }
    }

    /// Public entry for scripted or test-driven elections.
    pub fn elect(&mut self, clique: CliqueId) -> Option<DeviceId> {
        self.ensure_injection_point(clique)
    }

    fn consistency_pass(&mut self) {
        let now = self.now();
        let active: Vec<ConsistencyRequirement> =
            self.requirements.iter().filter(|r| self.requirement_active(r)).cloned().collect();
        let injuries = check_requirements(&active, &self.replicas, now);
        let current: BTreeSet<(DeviceId, ItemId)> = injuries.iter().map(|i| (i.seeker, i.item.clone())).collect();
        for inj in &injuries {
            if self.injured.contains(&(inj.seeker, inj.item.clone())) {
                continue;
            }
            let (reason, value) = match inj.reason {
                InjuryReason::Age(a) => ("age", a),
                InjuryReason::Wait(w) => ("wait", w),
            };
            self.trace.push(TraceRecord::Injury {
                time: now,
                seeker: inj.seeker,
                item: inj.item.clone(),
                reason: reason.to_string(),
                value,
                clique: self.clique_of(inj.seeker),
            });
        }
        self.injured = current;

        match self.cfg.mode {
            Mode::Injection => {
                let epoch = self.topology.epoch();
                self.retry_after.retain(|_, (e, t)| e.is_none_or(|e| e == epoch) && *t > now);
                let mut busy: BTreeSet<(CliqueId, ItemId)> = self.in_flight.keys().cloned().collect();
                busy.extend(self.retry_after.keys().cloned());
                let index = &self.clique_index;
                let cliques = &self.cliques;
                let mut groups = trigger_injections(&injuries, |d| index.get(&d).map(|&i| cliques[i].id), &busy);
                let rank = |g: &crate::consistency::TriggerGroup| TargetRank {
                    priority: self.items[&g.item].properties.priority,
                    strictest_age: g.strictest_age,
                    clique: g.clique,
                };
                groups.sort_by(|a, b| rank(a).cmp_urgency(&rank(b)));
                for g in groups {
                    self.serve_group(g.clique, &g.item, g.strictest_age, &g.seekers);
                }
            }
            Mode::PureBackbone => {
                self.fetch_after.retain(|_, t| *t > now);
                for inj in &injuries {
                    let key = (inj.seeker, inj.item.clone());
                    if self.fetching.contains(&key) || self.fetch_after.contains_key(&key) || !self.capable(inj.seeker) {
                        continue;
                    }
                    if self.items[&inj.item].properties.scope == Scope::CliqueLocal {
                        continue;
                    }
                    self.fetching.insert(key.clone());
                    let id = self.entity_fetch_inner(inj.seeker, &inj.item, false);
                    self.runs[id as usize].fetch = Some(key);
                    if !self.runs[id as usize].open {
                        self.fetching.remove(&(inj.seeker, inj.item.clone()));
                    }
                }
            }
            Mode::PureAdhoc => {}
        }
    }

    /// Serves one injured (clique, item) group: from a fresh enough local
    /// replica if one exists, otherwise through the backbone.
    fn serve_group(&mut self, clique: CliqueId, item: &ItemId, strictest: f64, seekers: &BTreeSet<DeviceId>) {
        let now = self.now();
        if let Some((holder, r)) = self.best_holder(clique, item) {
            let fresh = age_of(&r, now) <= strictest;
            let missing = seekers.iter().any(|&s| self.replicas.version(s, item) < r.version);
            if fresh && missing {
                let epi = self.start_epidemic(holder, item, r);
                if !self.epidemics[epi].state.complete {
                    self.in_flight.insert((clique, item.clone()), Flight { epidemic: Some(epi) });
                }
                return;
            }
        }
        if self.items[item].properties.scope == Scope::CliqueLocal {
            return;
        }
        let key = (clique, item.clone());
        self.in_flight.insert(key.clone(), Flight::default());
        self.requested_inner(clique, item, seekers.clone(), Some(key));
    }

    fn sample(&mut self, index: u64) {
        let now = self.now();
        let mut ages = Vec::new();
        for r in &self.requirements {
            if !self.requirement_active(r) {
                continue;
            }
            if let Some(rep) = self.replicas.get(r.seeker, &r.item) {
                ages.push(age_of(rep, now));
            }
        }
        self.staleness_sum += ages.iter().sum::<f64>();
        self.staleness_samples += ages.len() as u64;
        let mut row = SeriesRow {
            time: now.as_secs_f64(),
            alive: self.topology.node_count(),
            cliques: self.cliques.len(),
            epoch: self.topology.epoch(),
            injured: self.injured.len(),
            mean_age: (!ages.is_empty()).then(|| ages.iter().sum::<f64>() / ages.len() as f64),
            backbone_messages: self.backbone_messages,
            adhoc_messages: self.adhoc_messages,
            total_cost: self.ledger.total_units(),
            global_efficiency: None,
            characteristic_path_length: None,
        };
        if index.is_multiple_of(self.cfg.sample_every) {
            if let Ok(m) = graph_efficiency(&self.topology) {
                let g = &mut self.graph;
                g.samples += 1;
                g.efficiency += m.global_efficiency;
                g.disconnected += m.disconnected_fraction;
                if let Some(p) = m.characteristic_path_length {
                    g.path += p;
                    g.path_samples += 1;
                }
                let capable: BTreeSet<DeviceId> =
                    self.devices.values().filter(|d| d.can_use_backbone()).map(|d| d.id).collect();
                if let Ok(h) = graph_efficiency(&hybrid_topology(&self.topology, &capable)) {
                    if let Some(p) = h.characteristic_path_length {
                        g.hybrid += p;
                        g.hybrid_samples += 1;
                    }
                }
                row.global_efficiency = Some(m.global_efficiency);
                row.characteristic_path_length = m.characteristic_path_length;
            }
        }
        self.series.push(row);
    }

    // ---- epidemics ----

    fn start_epidemic(&mut self, source: DeviceId, item: &ItemId, replica: ItemReplica) -> usize {
        let state = InfectionState::start(source, item.clone(), replica.version, self.now(), &self.topology, &InterestFilter::All);
        let idx = self.epidemics.len();
        let complete = state.complete;
        self.epidemics.push(EpidemicRun { state, produced_at: replica.produced_at });
        if complete {
            self.epidemic_done(idx);
        } else {
            self.after(self.cfg.tick, Event::GossipRound(idx));
        }
        idx
    }

    fn gossip_round(&mut self, idx: usize) {
        let now = self.now();
        let (item, version, produced_at) = {
            let e = &self.epidemics[idx];
            (e.state.item.clone(), e.state.version, e.produced_at)
        };
        let replicas = &self.replicas;
        let holds = |d: DeviceId| replicas.version(d, &item) >= version;
        let out = self.epidemics[idx].state.gossip_round(
            &self.topology,
            self.cfg.fanout,
            &InterestFilter::All,
            holds,
            now,
            &mut self.rng_gossip,
        );
        let replica = ItemReplica { version, produced_at, received_at: now };
        for (s, r) in out.transmissions {
            self.send(
                MessageContext::Epidemic(idx as u64),
                MessageKind::Forward,
                Hop::AdHoc,
                Endpoint::Device(s),
                Endpoint::Device(r),
                Some(&item),
                Some(version),
            );
            self.receive(r, &item, replica, InfectCause::Epidemic(idx as u64), Some(Endpoint::Device(s)));
        }
        if self.epidemics[idx].state.complete {
            self.epidemic_done(idx);
        } else {
            self.after(self.cfg.tick, Event::GossipRound(idx));
        }
    }

    fn epidemic_done(&mut self, idx: usize) {
        self.in_flight.retain(|_, f| f.epidemic != Some(idx));
    }

    // ---- production, registration, scripted actions ----

    fn produce(&mut self, item: &ItemId) {
        let now = self.now();
        let def = self.items[item].clone();
        if let Some(every) = def.every {
            let next = now + every;
            if next <= self.cfg.duration {
                self.schedule(next, Event::Produce(item.clone()));
            }
        }
        if def.origin.is_some_and(|p| !self.alive(p)) {
            return;
        }
        let version = self.latest.get(item).copied().unwrap_or(0) + 1;
        self.latest.insert(item.clone(), version);
        let replica = ItemReplica { version, produced_at: now, received_at: now };
        match def.origin {
            None => {
                let digest = payload_digest(item, version);
                self.backbone.store(item, StoredItem { version, produced_at: now, digest });
                if def.push_on_update && self.cfg.mode == Mode::Injection {
                    self.push(item);
                }
            }
            Some(p) => {
                self.receive(p, item, replica, InfectCause::Produced, None);
                match self.cfg.mode {
                    Mode::Injection | Mode::PureAdhoc => {
                        self.start_epidemic(p, item, replica);
                    }
                    Mode::PureBackbone => {
                        if def.properties.scope == Scope::Global && self.capable(p) {
                            self.clique_inject(p, item);
                        }
                    }
                }
            }
        }
    }

    /// Registers `device` for `service` with one backbone message billed to it.
    pub fn register(&mut self, device: DeviceId, service: &ServiceId, via: RegisterVia) -> bool {
        if self.cfg.mode != Mode::Injection || !self.capable(device) {
            return false;
        }
        let id = self.next_registration;
        self.next_registration += 1;
        self.send(
            MessageContext::Registration(id),
            MessageKind::Register,
            Hop::Backbone,
            Endpoint::Device(device),
            Endpoint::Backbone,
            None,
            None,
        );
        let clique = self.clique_of(device);
        let versions: BTreeMap<ItemId, u64> = self
            .replicas
            .held_by(device)
            .filter(|(i, _)| self.items.get(*i).is_some_and(|d| &d.service == service))
            .map(|(i, r)| (i.clone(), r.version))
            .collect();
        self.backbone.register(service, device, self.now(), clique, versions);
        if let Some(d) = self.devices.get_mut(&device) {
            d.registrations.insert(service.clone());
        }
        self.trace.push(TraceRecord::Register { time: self.now(), id, device, service: service.clone(), clique, via });
        self.registrations += 1;
        true
    }

    fn run_action(&mut self, i: usize) {
        let a = self.actions[i].clone();
        let device = a.device.map(DeviceId);
        let item = a.item.as_deref().map(ItemId::new);
        match a.kind {
            ActionKind::Kill => {
                if let Some(d) = device.and_then(|d| self.devices.get_mut(&d)) {
                    d.battery = 0.0;
                }
                return;
            }
            ActionKind::Produce => {
                self.produce(&item.expect("validated"));
                return;
            }
            _ => {}
        }
        if self.cfg.mode != Mode::Injection {
            log::debug!("skipping scripted {:?} outside injection mode", a.kind);
            return;
        }
        let (d, it) = (device.unwrap_or(DeviceId(0)), item.unwrap_or_else(|| ItemId::new("")));
        match a.kind {
            ActionKind::Register => {
                self.register(d, &ServiceId::new(a.service.expect("validated")), RegisterVia::Manual);
            }
            ActionKind::Request => match self.clique_of(d) {
                Some(c) => {
                    self.inject_requested(c, &it);
                }
                None => {
                    self.rejected(InjectionKind::BackboneRequested, Endpoint::Device(d), &it, InjectionError::UnknownClique);
                }
            },
            ActionKind::Push => {
                self.push(&it);
            }
            ActionKind::EntityFetch => {
                self.entity_fetch(d, &it);
            }
            ActionKind::CliqueInject => {
                self.clique_inject(d, &it);
            }
            ActionKind::ForcedCliqueInject => {
                self.forced_clique_inject(d, &it);
            }
            ActionKind::WormholeDirect => {
                self.wormhole_direct(d, DeviceId(a.to.expect("validated")), &it);
            }
            ActionKind::WormholeMediated => {
                self.wormhole_mediated(d, &it);
            }
            ActionKind::Kill | ActionKind::Produce => unreachable!(),
        }
    }

    // ---- wrap-up ----

    fn close_open_injections(&mut self) {
        let open: Vec<u64> = self.runs.iter().filter(|r| r.open).map(|r| r.event.id).collect();
        for id in open {
            self.finish_run(id, InjectionStatus::Failed(InjectionError::Incomplete));
        }
    }

    fn summarize(&self) -> RunMetrics {
        let requirements = self.seekers.len() as u64;
        let satisfied = self.satisfied.len() as u64;
        let mut by_kind = BTreeMap::new();
        for k in InjectionKind::ALL {
            by_kind.insert(k, 0);
        }
        for r in &self.runs {
            *by_kind.entry(r.event.kind).or_insert(0) += 1;
        }
        let g = &self.graph;
        let mean = |sum: f64, n: u64| (n > 0).then(|| sum / n as f64);
        RunMetrics {
            scenario: self.name.clone(),
            mode: self.cfg.mode.as_str().to_string(),
            seed: self.seed,
            duration: self.cfg.duration.as_secs_f64(),
            ticks: self.ticks,
            backbone_msg_cost: self.cfg.costs.backbone_msg_cost,
            adhoc_msg_cost: self.cfg.costs.adhoc_msg_cost,
            backbone_messages: self.backbone_messages,
            adhoc_messages: self.adhoc_messages,
            backbone_cost: self.ledger.total_backbone_units(),
            adhoc_cost: self.ledger.total_adhoc_units(),
            total_cost: self.ledger.total_units(),
            baseline_backbone_cost: None,
            baseline_unserved: None,
            baseline_adhoc_coverage: None,
            mean_staleness: mean(self.staleness_sum, self.staleness_samples).unwrap_or(0.0),
            coverage: if requirements == 0 { 1.0 } else { satisfied as f64 / requirements as f64 },
            requirements,
            satisfied,
            injections_by_kind: by_kind,
            injection_failures: self.runs.iter().filter(|r| r.event.status.is_failure()).count() as u64,
            elections: self.elections,
            handovers: self.handovers,
            registrations: self.registrations,
            characteristic_path_length: mean(g.path, g.path_samples),
            disconnected_fraction: mean(g.disconnected, g.samples),
            global_efficiency: mean(g.efficiency, g.samples),
            hybrid_path_length: mean(g.hybrid, g.hybrid_samples),
            ledger_digest: self.ledger.digest(),
        }
    }
}

/// Stand-in for item content: a stable hash of (item, version).
fn payload_digest(item: &ItemId, version: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in item.as_str().bytes().chain(version.to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Runs a scenario to completion in its configured mode.
pub fn run(scenario: &Scenario) -> Result<RunOutput, RunError> {
    World::new(scenario)?.finish()
}

fn with_mode(scenario: &Scenario, mode: Mode) -> Scenario {
    Scenario { mode, ..scenario.clone() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneBaseline {
    pub backbone_messages: u64,
    pub backbone_cost: u64,
    /// Requirements no individual fetch could serve.
    pub unserved: Vec<(DeviceId, ItemId)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdhocBaseline {
    pub coverage: f64,
    pub unsatisfied: Vec<(DeviceId, ItemId)>,
    pub mean_staleness: f64,
}

fn unsatisfied(scenario: &Scenario, out: &RunOutput) -> Vec<(DeviceId, ItemId)> {
    let mut wanted: BTreeSet<(DeviceId, ItemId)> = BTreeSet::new();
    for r in &scenario.requirements {
        for &s in &r.seekers {
            wanted.insert((DeviceId(s), ItemId::new(r.item.as_str())));
        }
    }
    for rec in &out.trace {
        if let TraceRecord::Infect { device, item, seeker: true, .. } = rec {
            wanted.remove(&(*device, item.clone()));
        }
    }
    wanted.into_iter().collect()
}

/// Replays the scenario with every seeker fetching for itself over the backbone.
pub fn baseline_pure_backbone(scenario: &Scenario) -> Result<BackboneBaseline, RunError> {
    let s = with_mode(scenario, Mode::PureBackbone);
    let out = run(&s)?;
    Ok(BackboneBaseline {
        backbone_messages: out.metrics.backbone_messages,
        backbone_cost: out.metrics.backbone_cost,
        unserved: unsatisfied(&s, &out),
    })
}

/// Replays the scenario with the backbone switched off.
pub fn baseline_pure_adhoc(scenario: &Scenario) -> Result<AdhocBaseline, RunError> {
    let s = with_mode(scenario, Mode::PureAdhoc);
    let out = run(&s)?;
    Ok(AdhocBaseline {
        coverage: out.metrics.coverage,
        unsatisfied: unsatisfied(&s, &out),
        mean_staleness: out.metrics.mean_staleness,
    })
}

/// Runs the scenario and, in injection mode, both baselines; the baseline
/// columns of the metrics are filled in.
pub fn run_with_baselines(scenario: &Scenario) -> Result<RunOutput, RunError> {
    let mut out = run(scenario)?;
    if scenario.mode == Mode::Injection {
        let bb = baseline_pure_backbone(scenario)?;
        let ah = baseline_pure_adhoc(scenario)?;
        out.metrics.baseline_backbone_cost = Some(bb.backbone_cost);
        out.metrics.baseline_unserved = Some(bb.unserved.len() as u64);
        out.metrics.baseline_adhoc_coverage = Some(ah.coverage);
    }
    Ok(out)
}
