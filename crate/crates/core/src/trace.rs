//! Line-oriented run trace: one tab-separated, kind-tagged record per line.
//!
//! Fields are `key=value`, e.g. `12.500000 MSG id=41 ctx=inj:3 kind=Deliver hop=backbone from=BB to=7 ...`
//! with tabs between them.
//!
//! Absent optional values are written as `-`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::consistency::Scope;
use crate::ids::{CliqueId, DeviceId, Endpoint, ItemId, ServiceId};
use crate::protocol::{Hop, InjectionKind, InjectionStatus, MessageContext, MessageKind};
use crate::time::SimTime;

/// What caused a replica to arrive at a device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfectCause {
    Epidemic(u64),
    Injection(u64),
    /// The device produced the version itself.
    Produced,
}

impl fmt::Display for InfectCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InfectCause::Epidemic(i) => write!(f, "epi:{i}"),
            InfectCause::Injection(i) => write!(f, "inj:{i}"),
            InfectCause::Produced => f.write_str("prod"),
        }
    }
}

impl FromStr for InfectCause {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "prod" {
            return Ok(InfectCause::Produced);
        }
        match s.parse::<MessageContext>()? {
            MessageContext::Epidemic(i) => Ok(InfectCause::Epidemic(i)),
            MessageContext::Injection(i) => Ok(InfectCause::Injection(i)),
            _ => Err(format!("bad infection cause `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegisterVia {
    Manual,
    GeoFence,
}

impl RegisterVia {
    fn as_str(self) -> &'static str {
        match self {
            RegisterVia::Manual => "manual",
            RegisterVia::GeoFence => "geofence",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceRecord {
    Tick {
        time: SimTime,
        index: u64,
        epoch: u64,
        alive: usize,
        cliques: usize,
    },
    Msg {
        time: SimTime,
        id: u64,
        context: MessageContext,
        kind: MessageKind,
        hop: Hop,
        from: Endpoint,
        to: Endpoint,
        item: Option<ItemId>,
        /// Present iff the message carries the item itself.
        version: Option<u64>,
        scope: Option<Scope>,
    },
    Elect {
        time: SimTime,
        id: u64,
        clique: CliqueId,
        winner: DeviceId,
        score: f64,
        members: usize,
        reason: String,
    },
    Handover {
        time: SimTime,
        id: u64,
        clique: CliqueId,
        from: DeviceId,
        to: DeviceId,
        old_score: f64,
        new_score: f64,
    },
    Inject {
        time: SimTime,
        id: u64,
        kind: InjectionKind,
        status: InjectionStatus,
        initiator: Endpoint,
        injection_point: Option<DeviceId>,
        item: ItemId,
        version: Option<u64>,
        source_clique: Option<CliqueId>,
        target_clique: Option<CliqueId>,
        requested_at: SimTime,
        delivered_at: Option<SimTime>,
        backbone_messages: u64,
        adhoc_messages: u64,
        interested: BTreeSet<DeviceId>,
    },
    Infect {
        time: SimTime,
        cause: InfectCause,
        item: ItemId,
        version: u64,
        produced_at: SimTime,
        device: DeviceId,
        from: Option<Endpoint>,
        seeker: bool,
    },
    Injury {
        time: SimTime,
        seeker: DeviceId,
        item: ItemId,
        /// `"age"` or `"wait"`.
        reason: String,
        value: f64,
        clique: Option<CliqueId>,
    },
    Register {
        time: SimTime,
        id: u64,
        device: DeviceId,
        service: ServiceId,
        clique: Option<CliqueId>,
        via: RegisterVia,
    },
}

impl TraceRecord {
    pub fn time(&self) -> SimTime {
        match self {
            TraceRecord::Tick { time, .. }
            | TraceRecord::Msg { time, .. }
            | TraceRecord::Elect { time, .. }
            | TraceRecord::Handover { time, .. }
            | TraceRecord::Inject { time, .. }
            | TraceRecord::Infect { time, .. }
            | TraceRecord::Injury { time, .. }
            | TraceRecord::Register { time, .. } => *time,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            TraceRecord::Tick { .. } => "TICK",
            TraceRecord::Msg { .. } => "MSG",
            TraceRecord::Elect { .. } => "ELECT",
            TraceRecord::Handover { .. } => "HANDOVER",
            TraceRecord::Inject { .. } => "INJECT",
            TraceRecord::Infect { .. } => "INFECT",
            TraceRecord::Injury { .. } => "INJURY",
            TraceRecord::Register { .. } => "REGISTER",
        }
    }
}

fn o<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "-".to_string(), T::to_string)
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}", self.time(), self.tag())?;
        match self {
            TraceRecord::Tick { index, epoch, alive, cliques, .. } => {
                write!(f, "\tn={index}\tepoch={epoch}\talive={alive}\tcliques={cliques}")
            }
            TraceRecord::Msg { id, context, kind, hop, from, to, item, version, scope, .. } => write!(
                f,
                "\tid={id}\tctx={context}\tkind={}\thop={}\tfrom={from}\tto={to}\titem={}\tver={}\tscope={}",
                kind.as_str(),
                hop.as_str(),
                o(item),
                o(version),
                scope.map_or("-", Scope::as_str)
            ),
            TraceRecord::Elect { id, clique, winner, score, members, reason, .. } => {
                write!(f, "\tid={id}\tclique={clique}\twinner={winner}\tscore={score:.6}\tmembers={members}\treason={reason}")
            }
            TraceRecord::Handover { id, clique, from, to, old_score, new_score, .. } => write!(
                f,
                "\tid={id}\tclique={clique}\tfrom={from}\tto={to}\told={old_score:.6}\tnew={new_score:.6}"
            ),
            TraceRecord::Inject {
                id,
                kind,
                status,
                initiator,
                injection_point,
                item,
                version,
                source_clique,
                target_clique,
                requested_at,
                delivered_at,
                backbone_messages,
                adhoc_messages,
                interested,
                ..
            } => {
                let interested = if interested.is_empty() {
                    "-".to_string()
                } else {
                    interested.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
                };
                write!(
                    f,
                    "\tid={id}\tkind={kind}\tstatus={status}\tinit={initiator}\tip={}\titem={item}\tver={}\tsrc={}\ttgt={}\treq={requested_at}\tdlv={}\tbb={backbone_messages}\tadhoc={adhoc_messages}\tinterested={interested}",
                    o(injection_point),
                    o(version),
                    o(source_clique),
                    o(target_clique),
                    o(delivered_at),
                )
            }
            TraceRecord::Infect { cause, item, version, produced_at, device, from, seeker, .. } => write!(
                f,
                "\tctx={cause}\titem={item}\tver={version}\tproduced={produced_at}\tdev={device}\tfrom={}\tseeker={}",
                o(from),
                u8::from(*seeker)
            ),
            TraceRecord::Injury { seeker, item, reason, value, clique, .. } => {
                write!(f, "\tseeker={seeker}\titem={item}\treason={reason}\tvalue={value:.6}\tclique={}", o(clique))
            }
            TraceRecord::Register { id, device, service, clique, via, .. } => {
                write!(f, "\tid={id}\tdev={device}\tservice={service}\tclique={}\tvia={}", o(clique), via.as_str())
            }
        }
    }
}

struct Fields<'a> {
    map: BTreeMap<&'a str, &'a str>,
}

impl<'a> Fields<'a> {
    fn raw(&self, key: &str) -> Result<&'a str, String> {
        self.map.get(key).copied().ok_or_else(|| format!("missing field `{key}`"))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T, String> {
        let v = self.raw(key)?;
        v.parse().map_err(|_| format!("bad value `{v}` for `{key}`"))
    }

    fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, String> {
        match self.raw(key)? {
            "-" => Ok(None),
            _ => self.get(key).map(Some),
        }
    }

    fn device(&self, key: &str) -> Result<DeviceId, String> {
        self.get::<u32>(key).map(DeviceId)
    }

    fn opt_device(&self, key: &str) -> Result<Option<DeviceId>, String> {
        Ok(self.opt::<u32>(key)?.map(DeviceId))
    }

    fn clique(&self, key: &str) -> Result<CliqueId, String> {
        self.get::<u32>(key).map(CliqueId)
    }

    fn opt_clique(&self, key: &str) -> Result<Option<CliqueId>, String> {
        Ok(self.opt::<u32>(key)?.map(CliqueId))
    }

    fn item(&self, key: &str) -> Result<ItemId, String> {
        self.raw(key).map(ItemId::new)
    }
}

fn parse_scope(s: &str) -> Result<Option<Scope>, String> {
    match s {
        "-" => Ok(None),
        "global" => Ok(Some(Scope::Global)),
        "clique_local" => Ok(Some(Scope::CliqueLocal)),
        _ => Err(format!("bad scope `{s}`")),
    }
}

impl FromStr for TraceRecord {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, String> {
        let mut parts = line.split('\t');
        let time: SimTime = parts.next().ok_or("empty line")?.parse()?;
        let tag = parts.next().ok_or("missing record kind")?;
        let mut map = BTreeMap::new();
        for p in parts {
            let (k, v) = p.split_once('=').ok_or_else(|| format!("field `{p}` is not key=value"))?;
            map.insert(k, v);
        }
        let f = Fields { map };
        Ok(match tag {
            "TICK" => TraceRecord::Tick {
                time,
                index: f.get("n")?,
                epoch: f.get("epoch")?,
                alive: f.get("alive")?,
                cliques: f.get("cliques")?,
            },
            "MSG" => TraceRecord::Msg {
                time,
                id: f.get("id")?,
                context: f.get("ctx")?,
                kind: f.get("kind")?,
                hop: f.get("hop")?,
                from: f.get("from")?,
                to: f.get("to")?,
                item: f.opt::<String>("item")?.map(ItemId),
                version: f.opt("ver")?,
                scope: parse_scope(f.raw("scope")?)?,
            },
            "ELECT" => TraceRecord::Elect {
                time,
                id: f.get("id")?,
                clique: f.clique("clique")?,
                winner: f.device("winner")?,
                score: f.get("score")?,
                members: f.get("members")?,
                reason: f.raw("reason")?.to_string(),
            },
            "HANDOVER" => TraceRecord::Handover {
                time,
                id: f.get("id")?,
                clique: f.clique("clique")?,
                from: f.device("from")?,
                to: f.device("to")?,
                old_score: f.get("old")?,
                new_score: f.get("new")?,
            },
            "INJECT" => TraceRecord::Inject {
                time,
                id: f.get("id")?,
                kind: f.get("kind")?,
                status: f.get("status")?,
                initiator: f.get("init")?,
                injection_point: f.opt_device("ip")?,
                item: f.item("item")?,
                version: f.opt("ver")?,
                source_clique: f.opt_clique("src")?,
                target_clique: f.opt_clique("tgt")?,
                requested_at: f.get("req")?,
                delivered_at: f.opt("dlv")?,
                backbone_messages: f.get("bb")?,
                adhoc_messages: f.get("adhoc")?,
                interested: match f.raw("interested")? {
                    "-" => BTreeSet::new(),
                    s => s
                        .split(',')
                        .map(|d| d.parse::<u32>().map(DeviceId).map_err(|_| format!("bad device `{d}`")))
                        .collect::<Result<_, _>>()?,
                },
            },
            "INFECT" => TraceRecord::Infect {
                time,
                cause: f.get("ctx")?,
                item: f.item("item")?,
                version: f.get("ver")?,
                produced_at: f.get("produced")?,
                device: f.device("dev")?,
                from: f.opt("from")?,
                seeker: f.raw("seeker")? == "1",
            },
            "INJURY" => TraceRecord::Injury {
                time,
                seeker: f.device("seeker")?,
                item: f.item("item")?,
                reason: f.raw("reason")?.to_string(),
                value: f.get("value")?,
                clique: f.opt_clique("clique")?,
            },
            "REGISTER" => TraceRecord::Register {
                time,
                id: f.get("id")?,
                device: f.device("dev")?,
                service: ServiceId::new(f.raw("service")?),
                clique: f.opt_clique("clique")?,
                via: match f.raw("via")? {
                    "manual" => RegisterVia::Manual,
                    "geofence" => RegisterVia::GeoFence,
                    v => return Err(format!("bad via `{v}`")),
                },
            },
            other => return Err(format!("unknown record kind `{other}`")),
        })
    }
}

pub fn render_trace(records: &[TraceRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&r.to_string());
        s.push('\n');
    }
    s
}

/// Parses a whole trace. Errors carry the 1-based line number.
pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| l.parse().map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: f64) -> SimTime {
        SimTime::from_secs_f64(s)
    }

    #[test]
    fn every_kind_round_trips() {
        let records = vec![
            TraceRecord::Tick { time: t(0.0), index: 0, epoch: 1, alive: 3, cliques: 2 },
            TraceRecord::Msg {
                time: t(1.5),
                id: 9,
                context: MessageContext::Injection(2),
                kind: MessageKind::Deliver,
                hop: Hop::Backbone,
                from: Endpoint::Backbone,
                to: Endpoint::Device(DeviceId(4)),
                item: Some(ItemId::new("bus")),
                version: Some(3),
                scope: Some(Scope::Global),
            },
            TraceRecord::Msg {
                time: t(1.5),
                id: 10,
                context: MessageContext::Election(1),
                kind: MessageKind::Probe,
                hop: Hop::AdHoc,
                from: Endpoint::Device(DeviceId(1)),
                to: Endpoint::Device(DeviceId(2)),
                item: None,
                version: None,
                scope: None,
            },
            TraceRecord::Elect { time: t(2.0), id: 1, clique: CliqueId(1), winner: DeviceId(2), score: 0.75, members: 4, reason: "initial".into() },
            TraceRecord::Handover { time: t(2.0), id: 2, clique: CliqueId(1), from: DeviceId(2), to: DeviceId(3), old_score: 0.5, new_score: 0.625 },
            TraceRecord::Inject {
                time: t(3.0),
                id: 2,
                kind: InjectionKind::BackboneRequested,
                status: InjectionStatus::Mediated(5),
                initiator: Endpoint::Device(DeviceId(2)),
                injection_point: Some(DeviceId(2)),
                item: ItemId::new("bus"),
                version: None,
                source_clique: None,
                target_clique: Some(CliqueId(1)),
                requested_at: t(2.0),
                delivered_at: None,
                backbone_messages: 1,
                adhoc_messages: 0,
                interested: [DeviceId(2), DeviceId(3)].into_iter().collect(),
            },
            TraceRecord::Infect {
                time: t(3.0),
                cause: InfectCause::Produced,
                item: ItemId::new("notes"),
                version: 1,
                produced_at: t(3.0),
                device: DeviceId(5),
                from: None,
                seeker: false,
            },
            TraceRecord::Injury { time: t(4.0), seeker: DeviceId(3), item: ItemId::new("bus"), reason: "wait".into(), value: 6.0, clique: Some(CliqueId(1)) },
            TraceRecord::Register { time: t(5.0), id: 0, device: DeviceId(2), service: ServiceId::new("transit"), clique: None, via: RegisterVia::GeoFence },
        ];
        let text = render_trace(&records);
        assert_eq!(parse_trace(&text).unwrap(), records);
    }

    #[test]
    fn errors_name_the_line() {
        let err = parse_trace("0.000000\tTICK\tn=0\tepoch=0\talive=0\tcliques=0\n1.000000\tBOGUS\n").unwrap_err();
        assert!(err.starts_with("line 2:"), "{err}");
    }
}
