//! Content-centric routing: codec, tables, forwarding and the advertisement protocol.

pub mod fabric;
pub mod message;
pub mod node;
pub mod tables;

pub use fabric::{Fabric, FabricConfig, FetchOutcome, FetchResult, Job, MessageRecord, ProcessRecord};
pub use message::{CcrMessage, CodecError, ContentId, MessageType};
pub use node::{crt_next_hop, Action, NodeState, RouteCtx};
pub use tables::{ContentStore, Crt, CrtEntry, Pit, PitEntry, PitKey};
