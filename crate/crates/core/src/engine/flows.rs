//! The seven injection flows as chains of timed steps.

use std::collections::BTreeSet;

use super::{Event, InjectionRun, Step, World};
use crate::consistency::{ItemReplica, Scope};
use crate::ids::{CliqueId, DeviceId, Endpoint, ItemId};
use crate::protocol::{
    Hop, InjectionError, InjectionEvent, InjectionKind, InjectionStatus, MessageContext, MessageKind, StoredItem,
};
use crate::scenario::Mode;
use crate::trace::{InfectCause, TraceRecord};

use InjectionError as E;
use InjectionKind as K;

impl World {
    fn open_run(&mut self, kind: InjectionKind, initiator: Endpoint, item: &ItemId) -> u64 {
        let id = self.runs.len() as u64;
        self.runs.push(InjectionRun {
            event: InjectionEvent::new(id, kind, initiator, item.clone(), self.now()),
            interested: BTreeSet::new(),
            open: true,
            share: false,
            mediate: false,
            flight: None,
            fetch: None,
            uploader: None,
            replica: None,
            receiver: None,
        });
        id
    }

    fn run_mut(&mut self, id: u64) -> &mut InjectionRun {
        &mut self.runs[id as usize]
    }

    /// Records an injection that fails before any message is sent.
    pub(super) fn rejected(&mut self, kind: InjectionKind, initiator: Endpoint, item: &ItemId, err: InjectionError) -> u64 {
        let id = self.open_run(kind, initiator, item);
        self.finish_run(id, InjectionStatus::Failed(err));
        id
    }

    fn fail_now(&mut self, id: u64, err: InjectionError) -> u64 {
        self.finish_run(id, InjectionStatus::Failed(err));
        id
    }

    fn scope_of(&self, item: &ItemId) -> Option<Scope> {
        self.items.get(item).map(|d| d.properties.scope)
    }

    fn msg(&mut self, id: u64, kind: MessageKind, hop: Hop, from: Endpoint, to: Endpoint, payload: Option<u64>) {
        let item = self.runs[id as usize].event.item.clone();
        let carries = payload.is_some() || matches!(kind, MessageKind::Request | MessageKind::ForceInject);
        self.send(MessageContext::Injection(id), kind, hop, from, to, carries.then_some(&item), payload);
    }

    fn up(&mut self, id: u64, kind: MessageKind, from: DeviceId, payload: Option<u64>) {
        self.msg(id, kind, Hop::Backbone, Endpoint::Device(from), Endpoint::Backbone, payload);
    }

    fn down(&mut self, id: u64, kind: MessageKind, to: DeviceId, payload: Option<u64>) {
        self.msg(id, kind, Hop::Backbone, Endpoint::Backbone, Endpoint::Device(to), payload);
    }

    fn step_after_backbone(&mut self, id: u64, step: Step) {
        self.after(self.cfg.backbone_latency, Event::Flow(id, step));
    }

    fn stored_replica(s: &StoredItem) -> ItemReplica {
        ItemReplica { version: s.version, produced_at: s.produced_at, received_at: s.produced_at }
    }

    /// Closes an injection: bills its backbone messages and writes the INJECT record.
    pub(super) fn finish_run(&mut self, id: u64, status: InjectionStatus) {
        let now = self.now();
        let bb_cost = self.cfg.costs.backbone_msg_cost;
        let run = &mut self.runs[id as usize];
        if !run.open {
            return;
        }
        run.open = false;
        run.event.status = status;
        if status == InjectionStatus::Delivered {
            run.event.delivered_at = Some(now);
        }
        if run.interested.is_empty() {
            if let Some(d) = run.event.injection_point.or(run.event.initiator.device()) {
                run.interested.insert(d);
            }
        }
        let total = run.event.backbone_messages * bb_cost;
        let anchor = run.event.injection_point.or_else(|| run.interested.iter().next().copied());
        let (interested, event) = (run.interested.clone(), run.event.clone());
        let (flight, fetch) = (run.flight.clone(), run.fetch.clone());
        if total > 0 {
            if let Some(a) = anchor {
                self.ledger.bill_injection(total, &interested, a);
            }
        }
        self.trace.push(TraceRecord::Inject {
            time: now,
            id,
            kind: event.kind,
            status,
            initiator: event.initiator,
            injection_point: event.injection_point,
            item: event.item.clone(),
            version: event.version,
            source_clique: event.source_clique,
            target_clique: event.target_clique,
            requested_at: event.requested_at,
            delivered_at: event.delivered_at,
            backbone_messages: event.backbone_messages,
            adhoc_messages: event.adhoc_messages,
            interested,
        });
        if let Some(key) = fetch {
            self.fetching.remove(&key);
        }
        if let (Some(key), true) = (flight, status.is_failure()) {
            self.in_flight.remove(&key);
            let until = now + self.backoff();
            self.retry_after.insert(key, (Some(self.topology.epoch()), until));
        }
    }

    // ---- backbone-initiated and requested ----

    /// A clique asks the backbone for an item through its injection point.
    pub fn inject_requested(&mut self, clique: CliqueId, item: &ItemId) -> u64 {
        let seekers = self.interested_in(clique, item);
        self.requested_inner(clique, item, seekers, None)
    }

    pub(super) fn requested_inner(
        &mut self,
        clique: CliqueId,
        item: &ItemId,
        seekers: BTreeSet<DeviceId>,
        flight: Option<(CliqueId, ItemId)>,
    ) -> u64 {
        let id = self.open_run(K::BackboneRequested, Endpoint::Backbone, item);
        let run = self.run_mut(id);
        run.flight = flight;
        run.event.target_clique = Some(clique);
        if self.cfg.mode != Mode::Injection {
            return self.fail_now(id, E::BackboneDisabled);
        }
        match self.scope_of(item) {
            None => return self.fail_now(id, E::UnknownItem),
            Some(Scope::CliqueLocal) => return self.fail_now(id, E::ScopeViolation),
            Some(Scope::Global) => {}
        }
        let Some(ip) = self.ensure_injection_point(clique) else {
            return self.fail_now(id, E::NoBackboneCapableDevice);
        };
        let run = self.run_mut(id);
        run.event.initiator = Endpoint::Device(ip);
        run.event.injection_point = Some(ip);
        run.interested = seekers;
        run.share = true;
        run.mediate = true;
        self.up(id, MessageKind::Request, ip, None);
        self.step_after_backbone(id, Step::AtBackbone);
        id
    }

    /// A device fetches an item for itself; the whole cost is its own.
    pub fn entity_fetch(&mut self, device: DeviceId, item: &ItemId) -> u64 {
        self.entity_fetch_inner(device, item, true)
    }

    pub(super) fn entity_fetch_inner(&mut self, device: DeviceId, item: &ItemId, share: bool) -> u64 {
        let id = self.open_run(K::EntityDriven, Endpoint::Device(device), item);
        let clique = self.clique_of(device);
        let run = self.run_mut(id);
        run.event.injection_point = Some(device);
        run.interested = BTreeSet::from([device]);
        run.share = share;
        run.event.target_clique = clique;
        if self.cfg.mode == Mode::PureAdhoc {
            return self.fail_now(id, E::BackboneDisabled);
        }
        if !self.capable(device) {
            return self.fail_now(id, E::NotBackboneCapable);
        }
        if self.scope_of(item) == Some(Scope::CliqueLocal) {
            return self.fail_now(id, E::ScopeViolation);
        }
        self.up(id, MessageKind::Request, device, None);
        self.step_after_backbone(id, Step::AtBackbone);
        id
    }

    /// The backbone pushes its latest version to one registered device per
    /// clique, newest registration first. Unreachable registrants are marked stale.
    pub fn push(&mut self, item: &ItemId) -> Vec<u64> {
        let Some(stored) = self.backbone.stored(item).copied() else {
            return vec![self.rejected(K::BackboneSpontaneous, Endpoint::Backbone, item, E::UnknownItem)];
        };
        if self.cfg.mode != Mode::Injection {
            return vec![self.rejected(K::BackboneSpontaneous, Endpoint::Backbone, item, E::BackboneDisabled)];
        }
        let service = self.items[item].service.clone();
        let mut by_clique: std::collections::BTreeMap<Option<CliqueId>, Vec<(crate::time::SimTime, DeviceId)>> =
            Default::default();
        for e in self.backbone.entries(&service).filter(|e| !e.stale) {
            by_clique.entry(e.last_known_clique).or_default().push((e.registered_at, e.device));
        }
        if by_clique.is_empty() {
            return vec![self.rejected(K::BackboneSpontaneous, Endpoint::Backbone, item, E::EmptyRegistry)];
        }
        let mut recipients = Vec::new();
        for (_, mut regs) in by_clique {
            regs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            for (_, d) in regs {
                if self.capable(d) && self.clique_of(d).is_some() {
                    recipients.push(d);
                    break;
                }
                self.backbone.mark_stale(&service, d);
            }
        }
        recipients.sort();
        recipients.dedup();
        if recipients.is_empty() {
            return vec![self.rejected(K::BackboneSpontaneous, Endpoint::Backbone, item, E::TargetUnreachable)];
        }
        let replica = Self::stored_replica(&stored);
        let mut ids = Vec::new();
        for d in recipients {
            let id = self.open_run(K::BackboneSpontaneous, Endpoint::Backbone, item);
            let clique = self.clique_of(d).expect("reachable");
            let mut interested = self.interested_in(clique, item);
            if interested.is_empty() {
                interested.insert(d);
            }
            let run = self.run_mut(id);
            run.event.injection_point = Some(d);
            run.event.target_clique = Some(clique);
            run.event.version = Some(stored.version);
            run.interested = interested;
            run.share = true;
            self.down(id, MessageKind::Deliver, d, Some(stored.version));
            self.step_after_backbone(id, Step::Deliver { to: d, replica });
            ids.push(id);
        }
        ids
    }

    // ---- clique-initiated ----

    /// A holder uploads its replica through the clique's injection point.
    pub fn clique_inject(&mut self, holder: DeviceId, item: &ItemId) -> u64 {
        let id = self.open_run(K::CliqueSpontaneous, Endpoint::Device(holder), item);
        let clique = self.clique_of(holder);
        let run = self.run_mut(id);
        run.event.source_clique = clique;
        run.interested = BTreeSet::from([holder]);
        if self.cfg.mode == Mode::PureAdhoc {
            return self.fail_now(id, E::BackboneDisabled);
        }
        if self.scope_of(item) != Some(Scope::Global) {
            return self.fail_now(id, E::ScopeViolation);
        }
        let Some(replica) = self.replicas.get(holder, item).copied() else {
            return self.fail_now(id, E::ItemNotPresentInClique);
        };
        let Some(clique) = clique else { return self.fail_now(id, E::UnknownClique) };
        let uploader = if self.cfg.mode == Mode::PureBackbone {
            if !self.capable(holder) {
                return self.fail_now(id, E::NotBackboneCapable);
            }
            holder
        } else {
            match self.ensure_injection_point(clique) {
                Some(ip) => ip,
                None => return self.fail_now(id, E::NoBackboneCapableDevice),
            }
        };
        self.stage_upload(id, holder, uploader, replica);
        id
    }

    /// The backbone asks a registered device of `device`'s clique to upload the item.
    pub fn forced_clique_inject(&mut self, device: DeviceId, item: &ItemId) -> u64 {
        let id = self.open_run(K::CliqueForced, Endpoint::Backbone, item);
        let Some(clique) = self.clique_of(device) else { return self.fail_now(id, E::UnknownClique) };
        let run = self.run_mut(id);
        run.event.source_clique = Some(clique);
        run.event.target_clique = Some(clique);
        if self.cfg.mode != Mode::Injection {
            return self.fail_now(id, E::BackboneDisabled);
        }
        if self.scope_of(item) != Some(Scope::Global) {
            return self.fail_now(id, E::ScopeViolation);
        }
        let service = self.items[item].service.clone();
        let Some(registrant) = self.backbone.latest_in_clique(&service, clique).map(|e| e.device) else {
            return self.fail_now(id, E::NotRegistered);
        };
        self.run_mut(id).interested = BTreeSet::from([registrant]);
        self.down(id, MessageKind::ForceInject, registrant, None);
        self.step_after_backbone(id, Step::Forced { registrant });
        id
    }

    /// Moves the replica from `holder` to `uploader` over one ad-hoc hop if
    /// they differ, then schedules the upload.
    fn stage_upload(&mut self, id: u64, holder: DeviceId, uploader: DeviceId, replica: ItemReplica) {
        let run = self.run_mut(id);
        run.uploader = Some(uploader);
        run.replica = Some(replica);
        if run.event.injection_point.is_none() {
            run.event.injection_point = Some(uploader);
        }
        let item = run.event.item.clone();
        if holder != uploader {
            self.msg(id, MessageKind::Forward, Hop::AdHoc, Endpoint::Device(holder), Endpoint::Device(uploader), Some(replica.version));
            self.receive(uploader, &item, replica, InfectCause::Injection(id), Some(Endpoint::Device(holder)));
            self.after(self.cfg.adhoc_latency, Event::Flow(id, Step::Upload));
        } else {
            self.after(crate::time::SimTime::ZERO, Event::Flow(id, Step::Upload));
        }
    }

    // ---- wormholes ----

    /// Carries an item from `from`'s clique to the clique of `to` through a
    /// backbone relay that never stores it.
    pub fn wormhole_direct(&mut self, from: DeviceId, to: DeviceId, item: &ItemId) -> u64 {
        let id = self.open_run(K::WormholeDirect, Endpoint::Device(from), item);
        let (src, tgt) = (self.clique_of(from), self.clique_of(to));
        let run = self.run_mut(id);
        run.event.source_clique = src;
        run.event.target_clique = tgt;
        if self.cfg.mode != Mode::Injection {
            return self.fail_now(id, E::BackboneDisabled);
        }
        let (Some(src), Some(tgt)) = (src, tgt) else { return self.fail_now(id, E::UnknownClique) };
        if src == tgt {
            return self.fail_now(id, E::SameClique);
        }
        if self.scope_of(item) != Some(Scope::Global) {
            return self.fail_now(id, E::ScopeViolation);
        }
        let service = self.items[item].service.clone();
        let Some(receiver) = self.backbone.latest_in_clique(&service, tgt).map(|e| e.device) else {
            return self.fail_now(id, E::NotRegistered);
        };
        let Some((holder, replica)) = self.best_holder(src, item) else {
            return self.fail_now(id, E::ItemNotPresentInClique);
        };
        let Some(ip) = self.ensure_injection_point(src) else {
            return self.fail_now(id, E::NoBackboneCapableDevice);
        };
        let mut interested = self.interested_in(tgt, item);
        if interested.is_empty() {
            interested.insert(from);
        }
        let run = self.run_mut(id);
        run.event.injection_point = Some(receiver);
        run.event.version = Some(replica.version);
        run.receiver = Some(receiver);
        run.interested = interested;
        run.share = true;
        self.stage_upload(id, holder, ip, replica);
        id
    }

    /// The backbone pulls an item out of the freshest other clique that holds
    /// it and hands it to `device`'s clique without keeping a copy.
    pub fn wormhole_mediated(&mut self, device: DeviceId, item: &ItemId) -> u64 {
        let id = self.open_run(K::WormholeMediated, Endpoint::Backbone, item);
        let Some(clique) = self.clique_of(device) else { return self.fail_now(id, E::UnknownClique) };
        self.run_mut(id).event.target_clique = Some(clique);
        if self.cfg.mode != Mode::Injection {
            return self.fail_now(id, E::BackboneDisabled);
        }
        if self.scope_of(item) != Some(Scope::Global) {
            return self.fail_now(id, E::ScopeViolation);
        }
        let Some(ip) = self.ensure_injection_point(clique) else {
            return self.fail_now(id, E::NoBackboneCapableDevice);
        };
        let mut interested = self.interested_in(clique, item);
        if interested.is_empty() {
            interested.insert(ip);
        }
        self.mediate(id, clique, ip, interested);
        id
    }

    fn mediate(&mut self, id: u64, clique: CliqueId, requester: DeviceId, interested: BTreeSet<DeviceId>) {
        let item = self.runs[id as usize].event.item.clone();
        let run = self.run_mut(id);
        run.event.injection_point = Some(requester);
        run.event.target_clique = Some(clique);
        run.receiver = Some(requester);
        run.interested = interested;
        run.share = true;
        let service = self.items[&item].service.clone();
        let mut candidates: Vec<(u64, CliqueId, std::cmp::Reverse<crate::time::SimTime>, DeviceId)> = Vec::new();
        let mut unreachable = Vec::new();
        for e in self.backbone.entries(&service).filter(|e| !e.stale) {
            let Some(c) = e.last_known_clique.filter(|c| *c != clique) else { continue };
            let v = e.versions.get(&item).copied().unwrap_or(0);
            if v == 0 {
                continue;
            }
            if !self.capable(e.device) {
                unreachable.push(e.device);
                continue;
            }
            candidates.push((v, c, std::cmp::Reverse(e.registered_at), e.device));
        }
        for d in unreachable {
            self.backbone.mark_stale(&service, d);
        }
        // Freshest version, then lowest clique id, then newest registration.
        candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)).then(a.3.cmp(&b.3)));
        match candidates.first() {
            None => {
                self.down(id, MessageKind::Ack, requester, None);
                self.step_after_backbone(id, Step::Fail(E::NoHolderClique));
            }
            Some(&(_, source, _, registrant)) => {
                self.run_mut(id).event.source_clique = Some(source);
                self.down(id, MessageKind::ForceInject, registrant, None);
                self.step_after_backbone(id, Step::Forced { registrant });
            }
        }
    }

    // ---- step handlers ----

    pub(super) fn flow_step(&mut self, id: u64, step: Step) {
        if !self.runs[id as usize].open {
            return;
        }
        match step {
            Step::AtBackbone => self.at_backbone(id),
            Step::Deliver { to, replica } => self.deliver(id, to, replica),
            Step::Upload => self.upload(id),
            Step::UploadArrived { replica } => self.upload_arrived(id, replica),
            Step::Forced { registrant } => self.forced(id, registrant),
            Step::Relay { replica } => self.relay(id, replica, true),
            Step::Fail(e) => self.finish_run(id, InjectionStatus::Failed(e)),
        }
    }

    fn at_backbone(&mut self, id: u64) {
        let run = &self.runs[id as usize];
        let requester = run.event.injection_point.expect("requests come from a device");
        let item = run.event.item.clone();
        let mediate = run.mediate;
        if let Some(stored) = self.backbone.stored(&item).copied() {
            self.run_mut(id).event.version = Some(stored.version);
            self.down(id, MessageKind::Deliver, requester, Some(stored.version));
            self.step_after_backbone(id, Step::Deliver { to: requester, replica: Self::stored_replica(&stored) });
            return;
        }
        let device_origin = self.items[&item].origin.is_some();
        if mediate && device_origin {
            let run = &self.runs[id as usize];
            let clique = run.event.target_clique.expect("requested injections name their clique");
            let interested = run.interested.clone();
            let flight = run.flight.clone();
            let child = self.open_run(K::WormholeMediated, Endpoint::Backbone, &item);
            self.run_mut(child).flight = flight;
            self.run_mut(id).flight = None;
            self.mediate(child, clique, requester, interested);
            self.finish_run(id, InjectionStatus::Mediated(child));
            return;
        }
        self.down(id, MessageKind::Ack, requester, None);
        self.step_after_backbone(id, Step::Fail(E::UnknownItem));
    }

    fn deliver(&mut self, id: u64, to: DeviceId, replica: ItemReplica) {
        if !self.alive(to) {
            self.finish_run(id, InjectionStatus::Failed(E::InjectionPointLost));
            return;
        }
        let item = self.runs[id as usize].event.item.clone();
        let newer = replica.version > self.replicas.version(to, &item);
        self.receive(to, &item, replica, InfectCause::Injection(id), Some(Endpoint::Backbone));
        let run = self.run_mut(id);
        run.event.version = Some(replica.version);
        let (share, mut flight) = (run.share, run.flight.take());
        let fetch = run.fetch.clone();
        self.finish_run(id, InjectionStatus::Delivered);
        if !newer {
            // Nothing newer exists yet; hold off before asking again.
            let until = self.now() + self.backoff();
            if let Some(key) = flight.take() {
                self.in_flight.remove(&key);
                self.retry_after.insert(key, (None, until));
            }
            if let Some(key) = fetch {
                self.fetch_after.insert(key, until);
            }
        }
        let epidemic = (share && self.cfg.mode == Mode::Injection).then(|| self.start_epidemic(to, &item, replica));
        if let Some(key) = flight {
            match epidemic.filter(|&e| !self.epidemics[e].state.complete) {
                Some(e) => {
                    self.in_flight.insert(key, super::Flight { epidemic: Some(e) });
                }
                None => {
                    self.in_flight.remove(&key);
                }
            }
        }
    }

    fn upload(&mut self, id: u64) {
        let run = &self.runs[id as usize];
        let uploader = run.uploader.expect("staged");
        let replica = run.replica.expect("staged");
        if !self.capable(uploader) {
            self.finish_run(id, InjectionStatus::Failed(E::InjectionPointLost));
            return;
        }
        self.run_mut(id).event.version = Some(replica.version);
        self.up(id, MessageKind::Deliver, uploader, Some(replica.version));
        self.step_after_backbone(id, Step::UploadArrived { replica });
    }

    fn upload_arrived(&mut self, id: u64, replica: ItemReplica) {
        let run = &self.runs[id as usize];
        let item = run.event.item.clone();
        match run.event.kind {
            K::WormholeDirect => self.relay(id, replica, false),
            K::WormholeMediated => {
                let requester = run.receiver.expect("mediated has a requester");
                let digest = super::payload_digest(&item, replica.version);
                let s = StoredItem { version: replica.version, produced_at: replica.produced_at, digest };
                self.backbone.hold_in_transit(id, item, s);
                self.down(id, MessageKind::Deliver, requester, Some(replica.version));
                self.backbone.release_transit(id);
                self.step_after_backbone(id, Step::Deliver { to: requester, replica });
            }
            _ => {
                let digest = super::payload_digest(&item, replica.version);
                self.backbone.store(&item, StoredItem { version: replica.version, produced_at: replica.produced_at, digest });
                self.finish_run(id, InjectionStatus::Delivered);
            }
        }
    }

    fn relay(&mut self, id: u64, replica: ItemReplica, retried: bool) {
        let run = &self.runs[id as usize];
        let target = run.receiver.expect("direct wormholes have a receiver");
        let source = run.uploader.expect("staged");
        if self.capable(target) {
            self.down(id, MessageKind::Forward, target, Some(replica.version));
            self.step_after_backbone(id, Step::Deliver { to: target, replica });
        } else if !retried {
            self.after(self.cfg.relay_timeout, Event::Flow(id, Step::Relay { replica }));
        } else {
            self.down(id, MessageKind::Ack, source, None);
            self.step_after_backbone(id, Step::Fail(E::TargetUnreachable));
        }
    }

    fn forced(&mut self, id: u64, registrant: DeviceId) {
        if !self.capable(registrant) {
            self.finish_run(id, InjectionStatus::Failed(E::InjectionPointLost));
            return;
        }
        let Some(clique) = self.clique_of(registrant) else {
            self.finish_run(id, InjectionStatus::Failed(E::InjectionPointLost));
            return;
        };
        let item = self.runs[id as usize].event.item.clone();
        let Some((holder, replica)) = self.best_holder(clique, &item) else {
            self.up(id, MessageKind::Ack, registrant, None);
            self.step_after_backbone(id, Step::Fail(E::ItemNotPresentInClique));
            return;
        };
        let ip = self.ensure_injection_point(clique).unwrap_or(registrant);
        if registrant != ip {
            self.msg(id, MessageKind::ForceInject, Hop::AdHoc, Endpoint::Device(registrant), Endpoint::Device(ip), None);
        }
        let run = self.run_mut(id);
        if run.event.kind == K::CliqueForced {
            run.event.injection_point = Some(ip);
            run.interested = BTreeSet::from([ip]);
        }
        self.stage_upload(id, holder, ip, replica);
    }
}
