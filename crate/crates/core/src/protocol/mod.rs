//! Injection protocol vocabulary: message and injection types plus the
//! backbone-side registration service. The flows themselves run inside the
//! simulation world (see `engine`).

pub mod backbone;
pub mod injection;
pub mod message;

pub use backbone::{BackboneService, RegistryEntry, StoredItem};
pub use injection::{InjectionError, InjectionEvent, InjectionKind, InjectionStatus};
pub use message::{Hop, Message, MessageContext, MessageKind, Payload};
