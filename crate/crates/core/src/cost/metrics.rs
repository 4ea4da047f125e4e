use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::protocol::InjectionKind;

/// One row of the metrics table. Costs are in integer units.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMetrics {
    pub scenario: String,
    pub mode: String,
    pub seed: u64,
    pub duration: f64,
    pub ticks: u64,
    pub backbone_msg_cost: u64,
    pub adhoc_msg_cost: u64,
    pub backbone_messages: u64,
    pub adhoc_messages: u64,
    pub backbone_cost: u64,
    pub adhoc_cost: u64,
    pub total_cost: u64,
    pub baseline_backbone_cost: Option<u64>,
    pub baseline_unserved: Option<u64>,
    pub baseline_adhoc_coverage: Option<f64>,
    pub mean_staleness: f64,
    pub coverage: f64,
    pub requirements: u64,
    pub satisfied: u64,
    pub injections_by_kind: BTreeMap<InjectionKind, u64>,
    pub injection_failures: u64,
    pub elections: u64,
    pub handovers: u64,
    pub registrations: u64,
    pub characteristic_path_length: Option<f64>,
    pub disconnected_fraction: Option<f64>,
    pub global_efficiency: Option<f64>,
    pub hybrid_path_length: Option<f64>,
    pub ledger_digest: String,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn f6(v: f64) -> String {
    format!("{v:.6}")
}

impl RunMetrics {
    pub fn injections(&self, kind: InjectionKind) -> u64 {
        self.injections_by_kind.get(&kind).copied().unwrap_or(0)
    }

    pub fn total_injections(&self) -> u64 {
        self.injections_by_kind.values().sum()
    }

    /// `(column, value)` pairs in table order.
    pub fn columns(&self) -> Vec<(&'static str, String)> {
        let mut c = vec![
            ("scenario", self.scenario.clone()),
            ("mode", self.mode.clone()),
            ("seed", self.seed.to_string()),
            ("duration", f6(self.duration)),
            ("ticks", self.ticks.to_string()),
            ("backbone_msg_cost", self.backbone_msg_cost.to_string()),
            ("adhoc_msg_cost", self.adhoc_msg_cost.to_string()),
            ("backbone_messages", self.backbone_messages.to_string()),
            ("adhoc_messages", self.adhoc_messages.to_string()),
            ("backbone_cost", self.backbone_cost.to_string()),
            ("adhoc_cost", self.adhoc_cost.to_string()),
            ("total_cost", self.total_cost.to_string()),
            ("baseline_backbone_cost", opt(self.baseline_backbone_cost)),
            ("baseline_unserved", opt(self.baseline_unserved)),
            ("baseline_adhoc_coverage", opt(self.baseline_adhoc_coverage.map(f6))),
            ("mean_staleness", f6(self.mean_staleness)),
            ("coverage", f6(self.coverage)),
            ("requirements", self.requirements.to_string()),
            ("satisfied", self.satisfied.to_string()),
        ];
        for kind in InjectionKind::ALL {
            c.push((kind.metric_name(), self.injections(kind).to_string()));
        }
        c.extend([
            ("injection_failures", self.injection_failures.to_string()),
            ("elections", self.elections.to_string()),
            ("handovers", self.handovers.to_string()),
            ("registrations", self.registrations.to_string()),
            ("characteristic_path_length", opt(self.characteristic_path_length.map(f6))),
            ("disconnected_fraction", opt(self.disconnected_fraction.map(f6))),
            ("global_efficiency", opt(self.global_efficiency.map(f6))),
            ("hybrid_path_length", opt(self.hybrid_path_length.map(f6))),
            ("ledger_digest", self.ledger_digest.clone()),
        ]);
        c
    }

    /// Header line plus one data line.
    pub fn to_csv(&self) -> String {
        let cols = self.columns();
        let header: Vec<&str> = cols.iter().map(|(k, _)| *k).collect();
        let row: Vec<String> = cols.iter().map(|(_, v)| csv_field(v)).collect();
        format!("{}\n{}\n", header.join(","), row.join(","))
    }
}

fn csv_field(v: &str) -> String {
    if v.contains([',', '"', '\n']) {
        format!("\"{}\"", v.replace('"', "\"\""))
    } else {
        v.to_string()
    }
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    out.push(cur);
    out
}

/// Reads a metrics table back as column → value (first data row).
pub fn parse_metrics_csv(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = split_csv_line(lines.next().ok_or("metrics table is empty")?);
    let row = split_csv_line(lines.next().ok_or("metrics table has no data row")?);
    if header.len() != row.len() {
        return Err(format!("metrics header has {} columns but row has {}", header.len(), row.len()));
    }
    Ok(header.into_iter().zip(row).collect())
}

/// One line of the per-tick time series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRow {
    pub time: f64,
    pub alive: usize,
    pub cliques: usize,
    pub epoch: u64,
    pub injured: usize,
    pub mean_age: Option<f64>,
    pub backbone_messages: u64,
    pub adhoc_messages: u64,
    pub total_cost: u64,
    pub global_efficiency: Option<f64>,
    pub characteristic_path_length: Option<f64>,
}

impl SeriesRow {
    pub const HEADER: &'static str = "time,alive,cliques,epoch,injured,mean_age,backbone_messages,adhoc_messages,total_cost,global_efficiency,characteristic_path_length";

    pub fn render_all(rows: &[SeriesRow]) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                f6(r.time),
                r.alive,
                r.cliques,
                r.epoch,
                r.injured,
                opt(r.mean_age.map(f6)),
                r.backbone_messages,
                r.adhoc_messages,
                r.total_cost,
                opt(r.global_efficiency.map(f6)),
                opt(r.characteristic_path_length.map(f6)),
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut m = RunMetrics { scenario: "a,b".into(), mode: "injection".into(), coverage: 1.0, ..Default::default() };
        m.injections_by_kind.insert(InjectionKind::WormholeDirect, 2);
        let parsed = parse_metrics_csv(&m.to_csv()).unwrap();
        assert_eq!(parsed["scenario"], "a,b");
        assert_eq!(parsed["coverage"], "1.000000");
        assert_eq!(parsed["inj_wormhole_direct"], "2");
        assert_eq!(parsed["baseline_backbone_cost"], "");
    }
}
