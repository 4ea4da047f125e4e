use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::ids::{CliqueId, DeviceId, Endpoint, ItemId};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InjectionKind {
    BackboneRequested,
    BackboneSpontaneous,
    EntityDriven,
    CliqueSpontaneous,
    CliqueForced,
    WormholeDirect,
    WormholeMediated,
}

impl InjectionKind {
    pub const ALL: [InjectionKind; 7] = [
        InjectionKind::BackboneRequested,
        InjectionKind::BackboneSpontaneous,
        InjectionKind::EntityDriven,
        InjectionKind::CliqueSpontaneous,
        InjectionKind::CliqueForced,
        InjectionKind::WormholeDirect,
        InjectionKind::WormholeMediated,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InjectionKind::BackboneRequested => "BackboneRequested",
            InjectionKind::BackboneSpontaneous => "BackboneSpontaneous",
            InjectionKind::EntityDriven => "EntityDriven",
            InjectionKind::CliqueSpontaneous => "CliqueSpontaneous",
            InjectionKind::CliqueForced => "CliqueForced",
            InjectionKind::WormholeDirect => "WormholeDirect",
            InjectionKind::WormholeMediated => "WormholeMediated",
        }
    }

    /// Column name used in the metrics table.
    pub fn metric_name(self) -> &'static str {
        match self {
            InjectionKind::BackboneRequested => "inj_backbone_requested",
            InjectionKind::BackboneSpontaneous => "inj_backbone_spontaneous",
            InjectionKind::EntityDriven => "inj_entity_driven",
            InjectionKind::CliqueSpontaneous => "inj_clique_spontaneous",
            InjectionKind::CliqueForced => "inj_clique_forced",
            InjectionKind::WormholeDirect => "inj_wormhole_direct",
            InjectionKind::WormholeMediated => "inj_wormhole_mediated",
        }
    }

    pub fn is_wormhole(self) -> bool {
        matches!(self, InjectionKind::WormholeDirect | InjectionKind::WormholeMediated)
    }
}

impl fmt::Display for InjectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InjectionKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown injection kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum InjectionError {
    #[error("no backbone-capable device in the clique")]
    NoBackboneCapableDevice,
    #[error("backbone service does not know the item")]
    UnknownItem,
    #[error("no device is registered for the service")]
    EmptyRegistry,
    #[error("device is dead or not backbone-capable")]
    NotBackboneCapable,
    #[error("no clique member holds the item")]
    ItemNotPresentInClique,
    #[error("relay target unreachable")]
    TargetUnreachable,
    #[error("source and target clique are the same")]
    SameClique,
    #[error("no other clique holds the item")]
    NoHolderClique,
    #[error("no registered device in the target clique")]
    NotRegistered,
    #[error("clique-local item may not cross the backbone")]
    ScopeViolation,
    #[error("receiving device died before delivery")]
    InjectionPointLost,
    #[error("backbone disabled in this mode")]
    BackboneDisabled,
    #[error("device is not part of any clique")]
    UnknownClique,
    #[error("run ended before the injection completed")]
    Incomplete,
}

impl InjectionError {
    pub const ALL: [InjectionError; 14] = [
        InjectionError::NoBackboneCapableDevice,
        InjectionError::UnknownItem,
        InjectionError::EmptyRegistry,
        InjectionError::NotBackboneCapable,
        InjectionError::ItemNotPresentInClique,
        InjectionError::TargetUnreachable,
        InjectionError::SameClique,
        InjectionError::NoHolderClique,
        InjectionError::NotRegistered,
        InjectionError::ScopeViolation,
        InjectionError::InjectionPointLost,
        InjectionError::BackboneDisabled,
        InjectionError::UnknownClique,
        InjectionError::Incomplete,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InjectionError::NoBackboneCapableDevice => "NoBackboneCapableDevice",
            InjectionError::UnknownItem => "UnknownItem",
            InjectionError::EmptyRegistry => "EmptyRegistry",
            InjectionError::NotBackboneCapable => "NotBackboneCapable",
            InjectionError::ItemNotPresentInClique => "ItemNotPresentInClique",
            InjectionError::TargetUnreachable => "TargetUnreachable",
            InjectionError::SameClique => "SameClique",
            InjectionError::NoHolderClique => "NoHolderClique",
            InjectionError::NotRegistered => "NotRegistered",
            InjectionError::ScopeViolation => "ScopeViolation",
            InjectionError::InjectionPointLost => "InjectionPointLost",
            InjectionError::BackboneDisabled => "BackboneDisabled",
            InjectionError::UnknownClique => "UnknownClique",
            InjectionError::Incomplete => "Incomplete",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjectionStatus {
    Pending,
    Delivered,
    /// The backbone handed the request over to a mediated wormhole injection.
    Mediated(u64),
    Failed(InjectionError),
}

impl InjectionStatus {
    pub fn is_failure(self) -> bool {
        matches!(self, InjectionStatus::Failed(_))
    }
}

impl fmt::Display for InjectionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InjectionStatus::Pending => f.write_str("pending"),
            InjectionStatus::Delivered => f.write_str("ok"),
            InjectionStatus::Mediated(c) => write!(f, "mediated:{c}"),
            InjectionStatus::Failed(e) => f.write_str(e.as_str()),
        }
    }
}

impl FromStr for InjectionStatus {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pending" => return Ok(InjectionStatus::Pending),
            "ok" => return Ok(InjectionStatus::Delivered),
            _ => {}
        }
        if let Some(c) = s.strip_prefix("mediated:") {
            return c.parse().map(InjectionStatus::Mediated).map_err(|_| format!("bad status `{s}`"));
        }
        InjectionError::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .map(InjectionStatus::Failed)
            .ok_or_else(|| format!("bad status `{s}`"))
    }
}

/// One injection, from the first message to delivery or failure.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionEvent {
    pub id: u64,
    pub kind: InjectionKind,
    pub initiator: Endpoint,
    pub injection_point: Option<DeviceId>,
    pub item: ItemId,
    pub version: Option<u64>,
    pub source_clique: Option<CliqueId>,
    pub target_clique: Option<CliqueId>,
    pub requested_at: SimTime,
    pub delivered_at: Option<SimTime>,
    pub backbone_messages: u64,
    pub adhoc_messages: u64,
    pub status: InjectionStatus,
}

impl InjectionEvent {
    pub fn new(id: u64, kind: InjectionKind, initiator: Endpoint, item: ItemId, now: SimTime) -> Self {
        InjectionEvent {
            id,
            kind,
            initiator,
            injection_point: None,
            item,
            version: None,
            source_clique: None,
            target_clique: None,
            requested_at: now,
            delivered_at: None,
            backbone_messages: 0,
            adhoc_messages: 0,
            status: InjectionStatus::Pending,
        }
    }
}
