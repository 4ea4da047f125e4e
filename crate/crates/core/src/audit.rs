//! Recomputes a run's metrics from its trace and reports every disagreement.

use std::collections::{BTreeMap, BTreeSet};

use crate::consistency::Scope;
use crate::cost::{parse_metrics_csv, CostLedger};
use crate::ids::{DeviceId, Endpoint, ItemId};
use crate::protocol::{Hop, InjectionKind, MessageContext};
use crate::trace::{parse_trace, TraceRecord};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditReport {
    /// `(check, passed)` in the order they ran.
    pub checks: Vec<(&'static str, bool)>,
    pub problems: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.problems.is_empty()
    }

    fn check(&mut self, name: &'static str, problems: Vec<String>) {
        self.checks.push((name, problems.is_empty()));
        self.problems.extend(problems.into_iter().map(|p| format!("{name}: {p}")));
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (name, ok) in &self.checks {
            s.push_str(&format!("{} {name}\n", if *ok { "ok  " } else { "FAIL" }));
        }
        for p in &self.problems {
            s.push_str(&format!("  {p}\n"));
        }
        s
    }
}

fn field<T: std::str::FromStr>(m: &BTreeMap<String, String>, key: &str) -> Result<T, String> {
    let raw = m.get(key).ok_or_else(|| format!("metrics lack `{key}`"))?;
    raw.parse().map_err(|_| format!("metrics `{key}` is not a number: `{raw}`"))
}

fn compare(out: &mut Vec<String>, what: &str, trace: impl PartialEq + std::fmt::Display, reported: impl std::fmt::Display) {
    let reported_s = reported.to_string();
    if trace.to_string() != reported_s {
        out.push(format!("{what}: trace gives {trace}, metrics report {reported_s}"));
    }
}

pub fn audit_text(trace: &str, metrics_csv: &str) -> Result<AuditReport, String> {
    let records = parse_trace(trace)?;
    let metrics = parse_metrics_csv(metrics_csv)?;
    audit_trace(&records, &metrics)
}

pub fn audit_trace(trace: &[TraceRecord], metrics: &BTreeMap<String, String>) -> Result<AuditReport, String> {
    let bb_cost: u64 = field(metrics, "backbone_msg_cost")?;
    let adhoc_cost: u64 = field(metrics, "adhoc_msg_cost")?;
    let mut r = AuditReport::default();

    let mut order = Vec::new();
    for w in trace.windows(2) {
        if w[1].time() < w[0].time() {
            order.push(format!("{} at {} follows a record at {}", w[1].tag(), w[1].time(), w[0].time()));
        }
    }
    r.check("time_order", order);

    let ticks = trace.iter().filter(|t| matches!(t, TraceRecord::Tick { .. })).count();
    let mut p = Vec::new();
    compare(&mut p, "ticks", ticks, field::<u64>(metrics, "ticks")?);
    r.check("ticks", p);

    let mut bb = 0u64;
    let mut adhoc = 0u64;
    let mut per_injection: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    let mut per_election: BTreeMap<u64, u64> = BTreeMap::new();
    let mut ledger = CostLedger::new();
    let mut leaks = Vec::new();
    for rec in trace {
        let TraceRecord::Msg { id, context, hop, from, item, scope, version, .. } = rec else { continue };
        let counts = match context {
            MessageContext::Injection(n) => Some(per_injection.entry(*n).or_default()),
            _ => None,
        };
        match hop {
            Hop::Backbone => {
                bb += 1;
                if let Some(c) = counts {
                    c.0 += 1;
                }
                if let (MessageContext::Registration(_), Endpoint::Device(d)) = (context, from) {
                    ledger.charge_backbone(*d, bb_cost);
                }
                if *scope == Some(Scope::CliqueLocal) && version.is_some() {
                    let name = item.as_ref().map_or("?", ItemId::as_str);
                    leaks.push(format!("message {id} carries clique-local `{name}` over the backbone"));
                }
            }
            Hop::AdHoc => {
                adhoc += 1;
                if let Some(c) = counts {
                    c.1 += 1;
                }
                if let Endpoint::Device(d) = from {
                    ledger.charge_adhoc(*d, adhoc_cost);
                }
            }
        }
        if let MessageContext::Election(n) = context {
            *per_election.entry(*n).or_default() += 1;
        }
    }
    let mut p = Vec::new();
    compare(&mut p, "backbone messages", bb, field::<u64>(metrics, "backbone_messages")?);
    compare(&mut p, "ad-hoc messages", adhoc, field::<u64>(metrics, "adhoc_messages")?);
    r.check("message_totals", p);

    let mut p = Vec::new();
    let mut kinds: BTreeMap<InjectionKind, u64> = BTreeMap::new();
    let mut failures = 0u64;
    let mut seen = BTreeSet::new();
    for rec in trace {
        let TraceRecord::Inject { id, kind, status, injection_point, backbone_messages, adhoc_messages, interested, .. } = rec
        else {
            continue;
        };
        if !seen.insert(*id) {
            p.push(format!("injection {id} closed twice"));
        }
        *kinds.entry(*kind).or_default() += 1;
        if status.is_failure() {
            failures += 1;
        }
        let (b, a) = per_injection.get(id).copied().unwrap_or_default();
        if (b, a) != (*backbone_messages, *adhoc_messages) {
            p.push(format!(
                "injection {id}: messages in trace {b} backbone/{a} ad-hoc, record claims {backbone_messages}/{adhoc_messages}"
            ));
        }
        let total = backbone_messages * bb_cost;
        let anchor: Option<DeviceId> = injection_point.or_else(|| interested.iter().next().copied());
        if total > 0 {
            match anchor {
                Some(a) => ledger.bill_injection(total, interested, a),
                None => p.push(format!("injection {id}: backbone cost with nobody to bill")),
            }
        }
    }
    for id in per_injection.keys() {
        if !seen.contains(id) {
            p.push(format!("messages for injection {id} but no INJECT record"));
        }
    }
    r.check("injection_messages", p);

    let mut p = Vec::new();
    let mut elections = 0u64;
    let mut handovers = 0u64;
    let mut election_ids = BTreeSet::new();
    for rec in trace {
        match rec {
            TraceRecord::Elect { id, members, .. } => {
                elections += 1;
                election_ids.insert(*id);
                compare(&mut p, &format!("election {id} messages"), per_election.get(id).copied().unwrap_or(0), 2 * (*members as u64 - 1));
            }
            TraceRecord::Handover { id, .. } => {
                handovers += 1;
                election_ids.insert(*id);
            }
            _ => {}
        }
    }
    for id in per_election.keys() {
        if !election_ids.contains(id) {
            p.push(format!("messages for election {id} but no ELECT or HANDOVER record"));
        }
    }
    compare(&mut p, "elections", elections, field::<u64>(metrics, "elections")?);
    compare(&mut p, "handovers", handovers, field::<u64>(metrics, "handovers")?);
    r.check("elections", p);

    let mut p = Vec::new();
    let registrations = trace.iter().filter(|t| matches!(t, TraceRecord::Register { .. })).count();
    compare(&mut p, "registrations", registrations, field::<u64>(metrics, "registrations")?);
    r.check("registrations", p);

    let mut p = Vec::new();
    for k in InjectionKind::ALL {
        compare(&mut p, k.metric_name(), kinds.get(&k).copied().unwrap_or(0), field::<u64>(metrics, k.metric_name())?);
    }
    compare(&mut p, "injection failures", failures, field::<u64>(metrics, "injection_failures")?);
    r.check("injection_kinds", p);

    let mut p = Vec::new();
    compare(&mut p, "ledger digest", ledger.digest(), metrics.get("ledger_digest").cloned().unwrap_or_default());
    compare(&mut p, "backbone cost", ledger.total_backbone_units(), field::<u64>(metrics, "backbone_cost")?);
    compare(&mut p, "ad-hoc cost", ledger.total_adhoc_units(), field::<u64>(metrics, "adhoc_cost")?);
    compare(&mut p, "total cost", ledger.total_units(), field::<u64>(metrics, "total_cost")?);
    if ledger.total_units() != bb * bb_cost + adhoc * adhoc_cost {
        p.push(format!(
            "ledger conservation: billed {} units but messages price to {}",
            ledger.total_units(),
            bb * bb_cost + adhoc * adhoc_cost
        ));
    }
    compare(&mut p, "cost conservation", bb * bb_cost + adhoc * adhoc_cost, field::<u64>(metrics, "total_cost")?);
    r.check("ledger", p);

    let mut p = Vec::new();
    let satisfied: BTreeSet<(DeviceId, &ItemId)> = trace
        .iter()
        .filter_map(|t| match t {
            TraceRecord::Infect { device, item, seeker: true, .. } => Some((*device, item)),
            _ => None,
        })
        .collect();
    let requirements: u64 = field(metrics, "requirements")?;
    compare(&mut p, "satisfied", satisfied.len(), field::<u64>(metrics, "satisfied")?);
    let coverage = if requirements == 0 { 1.0 } else { satisfied.len() as f64 / requirements as f64 };
    compare(&mut p, "coverage", format!("{coverage:.6}"), metrics.get("coverage").cloned().unwrap_or_default());
    r.check("coverage", p);

    r.check("privacy", leaks);
    Ok(r)
}
