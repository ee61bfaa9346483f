//! Delivery rules and the shared-channel event simulator.

pub mod channel;
pub mod network;
pub mod rules;
pub mod trace;

pub use channel::{frame_airtime, ChannelConfig, ChannelConfigError};
pub use network::{AttemptInfo, LossReason, NetEvent, NetStats, Network, SendError};
pub use rules::{DeliveryRules, DeliveryVerdict, Egress, IpPacket, MacFrame, NetError, Outcome, IP_UDP_HEADER};
pub use trace::{trace_csv_string, write_trace_csv, Layer, TraceRecord};
