use std::fmt;
use std::str::FromStr;

use crate::consistency::Scope;
use crate::ids::{Endpoint, ItemId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    Request,
    Deliver,
    Forward,
    ForceInject,
    Register,
    Probe,
    Ack,
}

impl MessageKind {
    pub const ALL: [MessageKind; 7] = [
        MessageKind::Request,
        MessageKind::Deliver,
        MessageKind::Forward,
        MessageKind::ForceInject,
        MessageKind::Register,
        MessageKind::Probe,
        MessageKind::Ack,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Request => "Request",
            MessageKind::Deliver => "Deliver",
            MessageKind::Forward => "Forward",
            MessageKind::ForceInject => "ForceInject",
            MessageKind::Register => "Register",
            MessageKind::Probe => "Probe",
            MessageKind::Ack => "Ack",
        }
    }
}

impl FromStr for MessageKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown message kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Hop {
    AdHoc,
    Backbone,
}

impl Hop {
    pub fn as_str(self) -> &'static str {
        match self {
            Hop::AdHoc => "adhoc",
            Hop::Backbone => "backbone",
        }
    }
}

impl FromStr for Hop {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "adhoc" => Ok(Hop::AdHoc),
            "backbone" => Ok(Hop::Backbone),
            _ => Err(format!("unknown hop `{s}`")),
        }
    }
}

/// What a message is attributed to, for cost accounting and trace audits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageContext {
    Injection(u64),
    Election(u64),
    Epidemic(u64),
    Registration(u64),
}

impl fmt::Display for MessageContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MessageContext::Injection(i) => write!(f, "inj:{i}"),
            MessageContext::Election(i) => write!(f, "elect:{i}"),
            MessageContext::Epidemic(i) => write!(f, "epi:{i}"),
            MessageContext::Registration(i) => write!(f, "reg:{i}"),
        }
    }
}

impl FromStr for MessageContext {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (tag, n) = s.split_once(':').ok_or_else(|| format!("bad context `{s}`"))?;
        let n: u64 = n.parse().map_err(|_| format!("bad context `{s}`"))?;
        match tag {
            "inj" => Ok(MessageContext::Injection(n)),
            "elect" => Ok(MessageContext::Election(n)),
            "epi" => Ok(MessageContext::Epidemic(n)),
            "reg" => Ok(MessageContext::Registration(n)),
            _ => Err(format!("bad context `{s}`")),
        }
    }
}

/// Item version carried by a message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Payload {
    pub item: ItemId,
    pub version: u64,
    pub scope: Scope,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub id: u64,
    pub context: MessageContext,
    pub kind: MessageKind,
    pub hop: Hop,
    pub from: Endpoint,
    pub to: Endpoint,
    /// Item named by control messages that carry no payload.
    pub item: Option<ItemId>,
    pub payload: Option<Payload>,
    pub size_units: u32,
}
