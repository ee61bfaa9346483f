//! Per-device protocol state machine.
//!
//! `handle_packet` performs no I/O: it updates the device's tables and
//! returns the actions the runtime must carry out.

use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use serde::Serialize;

use super::message::{CcrMessage, ContentId, MessageType};
use super::tables::{ContentStore, Crt, CrtEntry, Pit, PitKey};
use crate::backbone::{hop_between, next_hop, BackboneError, Hop, Relays};
use crate::time::{SimDuration, SimTime};
use crate::topology::{DeviceId, GroupId, PhysicalTopology, GO_ADDRESS};

pub const DEFAULT_CHUNK_SIZE: usize = 1400;
pub const DEFAULT_PIT_TIMEOUT: SimDuration = SimDuration::from_secs(5);
const NO_ADDRESS: Ipv4Addr = Ipv4Addr::UNSPECIFIED;

/// Read-only routing context shared by every node.
#[derive(Debug, Clone, Copy)]
pub struct RouteCtx<'a> {
    pub topo: &'a PhysicalTopology,
    pub relays: &'a Relays,
    pub pit_timeout: SimDuration,
    pub chunk_size: usize,
}

impl<'a> RouteCtx<'a> {
    pub fn new(topo: &'a PhysicalTopology, relays: &'a Relays) -> Self {
        RouteCtx { topo, relays, pit_timeout: DEFAULT_PIT_TIMEOUT, chunk_size: DEFAULT_CHUNK_SIZE }
    }

    fn relay_of(&self, g: GroupId) -> Option<DeviceId> {
        self.relays.get(&g).copied()
    }

    fn is_relay(&self, d: DeviceId) -> bool {
        self.relays.values().any(|&r| r == d)
    }

    fn hop(&self, from: DeviceId, to: DeviceId) -> Hop {
        hop_between(self.topo, from, to).expect("protocol peers share a group")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Action {
    Send { hop: Hop, msg: CcrMessage },
    /// Send and retransmit until `hop.to` acknowledges.
    SendReliable { hop: Hop, msg: CcrMessage },
    /// GO broadcast to its whole group, reliable toward `ack_from` if set.
    Broadcast { group: GroupId, msg: CcrMessage, ack_from: Option<DeviceId> },
    Acked { msg_id: u32, kind: MessageType, from: DeviceId },
    Deliver { content: ContentId, chunk: u32, chunk_count: u32, bytes: Vec<u8> },
    Failed { content: ContentId, chunk: u32 },
    ArmPit { key: PitKey, deadline: SimTime },
    CrtUpdated { content: ContentId },
    Discard { reason: &'static str },
}

/// Advertisement payload: the next hop members should record, the relay
/// expected to acknowledge (0.0.0.0 for none) and the content name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdvData {
    pub hint: Ipv4Addr,
    pub ack_from: Ipv4Addr,
    pub name: String,
}

impl AdvData {
    pub fn encode(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(8 + self.name.len());
        v.extend_from_slice(&self.hint.octets());
        v.extend_from_slice(&self.ack_from.octets());
        v.extend_from_slice(self.name.as_bytes());
        v
    }

    pub fn decode(data: &[u8]) -> Option<Self> {
        if data.len() < 8 {
            return None;
        }
        let ip = |b: &[u8]| Ipv4Addr::new(b[0], b[1], b[2], b[3]);
        Some(AdvData {
            hint: ip(&data[0..4]),
            ack_from: ip(&data[4..8]),
            name: String::from_utf8(data[8..].to_vec()).ok()?,
        })
    }
}

/// `[chunk index u32][chunk count u32][bytes]`.
pub fn encode_chunk(index: u32, count: u32, bytes: &[u8]) -> Vec<u8> {
    let mut v = Vec::with_capacity(8 + bytes.len());
    v.extend_from_slice(&index.to_be_bytes());
    v.extend_from_slice(&count.to_be_bytes());
    v.extend_from_slice(bytes);
    v
}

pub fn decode_chunk(data: &[u8]) -> Option<(u32, u32, &[u8])> {
    if data.len() < 8 {
        return None;
    }
    let index = u32::from_be_bytes(data[0..4].try_into().ok()?);
    let count = u32::from_be_bytes(data[4..8].try_into().ok()?);
    Some((index, count, &data[8..]))
}

fn chunk_of(data: &[u8]) -> Option<u32> {
    Some(u32::from_be_bytes(data.get(..4)?.try_into().ok()?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeState {
    pub device: DeviceId,
    pub crt: Crt,
    pub pit: Pit,
    pub store: ContentStore,
    seen: BTreeSet<(u32, MessageType)>,
}

impl NodeState {
    pub fn new(device: DeviceId) -> Self {
        NodeState { device, crt: Crt::default(), pit: Pit::default(), store: ContentStore::default(), seen: BTreeSet::new() }
    }

    fn own_address(&self, ctx: &RouteCtx<'_>) -> Ipv4Addr {
        let d = ctx.topo.device(self.device);
        d.p2p.ip.or(d.wifi.ip).unwrap_or(NO_ADDRESS)
    }

    /// Stores content and registers it: a client starts the registration
    /// exchange with its GO, a GO advertises straight away.
    pub fn register(&mut self, ctx: &RouteCtx<'_>, name: &str, payload: Vec<u8>, msg_id: u32) -> Vec<Action> {
        let id = self.store.insert(name, payload);
        self.crt.insert(id, CrtEntry { next_hop: self.own_address(ctx), via: None });
        self.seen.insert((msg_id, MessageType::ContentRegistration));
        if ctx.topo.is_owner(self.device) {
            self.seen.insert((msg_id, MessageType::ContentAdvertisement));
            return self.advertise_origin(ctx, id, msg_id, name, GO_ADDRESS);
        }
        let (group, _) = ctx.topo.client_group(self.device).expect("registering device belongs to a group");
        let go = ctx.topo.group(group).owner;
        let msg = CcrMessage::new(MessageType::ContentRegistration, msg_id, id, name.as_bytes().to_vec());
        vec![Action::SendReliable { hop: ctx.hop(self.device, go), msg }]
    }

    /// A local application asks for one chunk.
    pub fn request(&mut self, ctx: &RouteCtx<'_>, content: ContentId, chunk: u32, msg_id: u32, now: SimTime) -> Vec<Action> {
        let msg = CcrMessage::new(MessageType::ContentRequest, msg_id, content, chunk.to_be_bytes().to_vec());
        self.handle_request(ctx, &msg, self.device, now)
    }

    /// Processes one received message. `broadcast` tells whether it came
    /// in a GO broadcast.
    pub fn handle_packet(
        &mut self,
        ctx: &RouteCtx<'_>,
        msg: &CcrMessage,
        from: DeviceId,
        broadcast: bool,
        now: SimTime,
    ) -> Vec<Action> {
        match msg.kind {
            MessageType::ContentRegistration => self.handle_registration(ctx, msg, from),
            MessageType::ContentAdvertisement => self.handle_advertisement(ctx, msg, from, broadcast),
            MessageType::ContentRequest => self.handle_request(ctx, msg, from, now),
            MessageType::ContentData => self.handle_data(ctx, msg),
            MessageType::RouteFailureNotify => self.handle_failure(ctx, msg),
            k if k.is_ack() => vec![Action::Acked { msg_id: msg.msg_id, kind: k, from }],
            _ => vec![Action::Discard { reason: "signalling message outside a signalling exchange" }],
        }
    }

    fn handle_registration(&mut self, ctx: &RouteCtx<'_>, msg: &CcrMessage, from: DeviceId) -> Vec<Action> {
        let Some(group) = ctx.topo.owned_group(self.device) else {
            return vec![Action::Discard { reason: "registration at a non-GO" }];
        };
        let ack = Action::Send { hop: ctx.hop(self.device, from), msg: msg.ack_for().expect("registration has an ACK") };
        if !self.seen.insert((msg.msg_id, msg.kind)) {
            return vec![ack];
        }
        let provider = ctx.topo.addr_in_group(from, group).expect("registrant is a member");
        self.crt.insert(msg.content_id, CrtEntry { next_hop: provider, via: Some(ctx.hop(self.device, from)) });
        let name = String::from_utf8_lossy(&msg.data).into_owned();
        self.seen.insert((msg.msg_id, MessageType::ContentAdvertisement));
        let mut out = vec![ack, Action::CrtUpdated { content: msg.content_id }];
        out.extend(self.advertise_origin(ctx, msg.content_id, msg.msg_id, &name, provider));
        out
    }

    /// Origin-group advertisement: one broadcast acknowledged by the relay,
    /// plus an upward unicast when this GO bridges into a parent group.
    fn advertise_origin(&self, ctx: &RouteCtx<'_>, id: ContentId, msg_id: u32, name: &str, hint: Ipv4Addr) -> Vec<Action> {
        let topo = ctx.topo;
        let group = topo.owned_group(self.device).expect("caller is a GO");
        let mut out = Vec::new();
        if topo.group(group).client_count() > 0 {
            let relay = ctx.relay_of(group);
            let ack_from = relay.and_then(|r| topo.addr_in_group(r, group)).unwrap_or(NO_ADDRESS);
            let data = AdvData { hint, ack_from, name: name.to_string() }.encode();
            let msg = CcrMessage::new(MessageType::ContentAdvertisement, msg_id, id, data);
            out.push(Action::Broadcast { group, msg, ack_from: relay });
        }
        out.extend(self.advertise_up(ctx, id, msg_id, name));
        out
    }

    fn advertise_up(&self, ctx: &RouteCtx<'_>, id: ContentId, msg_id: u32, name: &str) -> Option<Action> {
        let group = ctx.topo.owned_group(self.device)?;
        let parent = ctx.topo.parent_group(group)?;
        let relay = ctx.relay_of(parent)?;
        Some(self.unicast_adv(ctx, relay, id, msg_id, name))
    }

    fn unicast_adv(&self, ctx: &RouteCtx<'_>, to: DeviceId, id: ContentId, msg_id: u32, name: &str) -> Action {
        let hop = ctx.hop(self.device, to);
        let hint = ctx.topo.addr_in_group(self.device, hop.group).unwrap_or(NO_ADDRESS);
        let data = AdvData { hint, ack_from: NO_ADDRESS, name: name.to_string() }.encode();
        Action::SendReliable { hop, msg: CcrMessage::new(MessageType::ContentAdvertisement, msg_id, id, data) }
    }

    fn handle_advertisement(&mut self, ctx: &RouteCtx<'_>, msg: &CcrMessage, from: DeviceId, broadcast: bool) -> Vec<Action> {
        let topo = ctx.topo;
        let Some(adv) = AdvData::decode(&msg.data) else {
            return vec![Action::Discard { reason: "malformed advertisement" }];
        };
        let me = self.device;
        let ack = || Action::Send { hop: ctx.hop(me, from), msg: msg.ack_for().expect("advertisement has an ACK") };
        let must_ack = !broadcast || (adv.ack_from != NO_ADDRESS && topo.device(me).owns_address(adv.ack_from));
        if !self.seen.insert((msg.msg_id, msg.kind)) {
            return if must_ack { vec![ack()] } else { Vec::new() };
        }
        let id = msg.content_id;
        let mut out = Vec::new();

        if broadcast {
            let group = topo.owned_group(from).expect("broadcasts come from GOs");
            let target = if adv.hint == GO_ADDRESS { Some(from) } else { topo.member_with_ip(group, adv.hint) };
            if let Some(t) = target.filter(|&t| t != me) {
                self.crt.insert(id, CrtEntry { next_hop: adv.hint, via: Some(ctx.hop(me, t)) });
                out.push(Action::CrtUpdated { content: id });
            }
            if must_ack {
                out.push(ack());
            }
            if ctx.relay_of(group) == Some(me) {
                for child in topo.child_groups(group) {
                    out.push(self.unicast_adv(ctx, topo.group(child).owner, id, msg.msg_id, &adv.name));
                }
            }
            return out;
        }

        let hop = ctx.hop(me, from);
        let next_hop = topo.addr_in_group(from, hop.group).expect("sender is a member");
        self.crt.insert(id, CrtEntry { next_hop, via: Some(hop) });
        out.push(ack());
        out.push(Action::CrtUpdated { content: id });

        let my_client_group = topo.client_group(me).map(|(g, _)| g);
        let from_is_child_bridge = |g: GroupId| topo.child_groups(g).iter().any(|&c| topo.group(c).owner == from);
        match (topo.owned_group(me), my_client_group) {
            // Relay receiving from a child bridge GO: up to its GO and across to siblings.
            (None, Some(g)) if ctx.relay_of(g) == Some(me) && from_is_child_bridge(g) => {
                out.push(self.unicast_adv(ctx, topo.group(g).owner, id, msg.msg_id, &adv.name));
                for child in topo.child_groups(g) {
                    let owner = topo.group(child).owner;
                    if owner != from {
                        out.push(self.unicast_adv(ctx, owner, id, msg.msg_id, &adv.name));
                    }
                }
            }
            // GO receiving from its own relay: content lives below; tell members and go up.
            (Some(g), _) if ctx.relay_of(g) == Some(from) => {
                let hint = topo.addr_in_group(from, g).expect("relay is a member");
                out.extend(self.group_broadcast(ctx, g, id, msg.msg_id, hint, &adv.name));
                out.extend(self.advertise_up(ctx, id, msg.msg_id, &adv.name));
            }
            // Bridge GO receiving from the parent group's relay: content lives above.
            (Some(g), Some(parent)) if ctx.relay_of(parent) == Some(from) => {
                out.extend(self.group_broadcast(ctx, g, id, msg.msg_id, GO_ADDRESS, &adv.name));
            }
            _ => {}
        }
        out
    }

    /// Unacknowledged broadcast for groups the content did not start in.
    fn group_broadcast(&self, ctx: &RouteCtx<'_>, group: GroupId, id: ContentId, msg_id: u32, hint: Ipv4Addr, name: &str) -> Option<Action> {
        if ctx.topo.group(group).client_count() == 0 {
            return None;
        }
        let data = AdvData { hint, ack_from: NO_ADDRESS, name: name.to_string() }.encode();
        let msg = CcrMessage::new(MessageType::ContentAdvertisement, msg_id, id, data);
        Some(Action::Broadcast { group, msg, ack_from: None })
    }

    fn is_plain(&self, ctx: &RouteCtx<'_>) -> bool {
        !ctx.topo.is_owner(self.device) && !ctx.is_relay(self.device)
    }

    fn reply(&self, ctx: &RouteCtx<'_>, to: DeviceId, msg: CcrMessage) -> Action {
        Action::Send { hop: ctx.hop(self.device, to), msg }
    }

    fn handle_request(&mut self, ctx: &RouteCtx<'_>, msg: &CcrMessage, from: DeviceId, now: SimTime) -> Vec<Action> {
        let me = self.device;
        let Some(chunk) = chunk_of(&msg.data) else {
            return vec![Action::Discard { reason: "malformed request" }];
        };
        let id = msg.content_id;
        let fail = |s: &Self| {
            if from == me {
                Action::Failed { content: id, chunk }
            } else {
                let notify = CcrMessage::new(MessageType::RouteFailureNotify, msg.msg_id, id, chunk.to_be_bytes().to_vec());
                s.reply(ctx, from, notify)
            }
        };

        if self.store.contains(&id) {
            let count = self.store.chunk_count(&id, ctx.chunk_size).expect("stored");
            let Some(bytes) = self.store.chunk(&id, chunk, ctx.chunk_size) else {
                return vec![fail(self)];
            };
            if from == me {
                return vec![Action::Deliver { content: id, chunk, chunk_count: count, bytes: bytes.to_vec() }];
            }
            let data = CcrMessage::new(MessageType::ContentData, msg.msg_id, id, encode_chunk(chunk, count, bytes));
            return vec![self.reply(ctx, from, data)];
        }

        let via = match self.crt.get(&id).and_then(|e| e.via) {
            Some(h) => h,
            None if from == me && self.is_plain(ctx) => {
                let (g, _) = ctx.topo.client_group(me).expect("plain devices are clients");
                ctx.hop(me, ctx.topo.group(g).owner)
            }
            None => return vec![Action::Discard { reason: "no CRT entry" }, fail(self)],
        };
        let key = PitKey { content: id, chunk };
        let deadline = now + ctx.pit_timeout;
        let mut out = Vec::new();
        if self.pit.append(key, from, deadline) {
            out.push(Action::ArmPit { key, deadline });
        }
        out.push(Action::Send { hop: via, msg: msg.clone() });
        out
    }

    fn handle_data(&mut self, ctx: &RouteCtx<'_>, msg: &CcrMessage) -> Vec<Action> {
        let Some((chunk, count, bytes)) = decode_chunk(&msg.data) else {
            return vec![Action::Discard { reason: "malformed data" }];
        };
        let Some(entry) = self.pit.take(&PitKey { content: msg.content_id, chunk }) else {
            return vec![Action::Discard { reason: "no PIT entry" }];
        };
        entry
            .previous_hops
            .into_iter()
            .map(|prev| {
                if prev == self.device {
                    Action::Deliver { content: msg.content_id, chunk, chunk_count: count, bytes: bytes.to_vec() }
                } else {
                    self.reply(ctx, prev, msg.clone())
                }
            })
            .collect()
    }

    fn handle_failure(&mut self, ctx: &RouteCtx<'_>, msg: &CcrMessage) -> Vec<Action> {
        let Some(chunk) = chunk_of(&msg.data) else {
            return vec![Action::Discard { reason: "malformed failure notice" }];
        };
        let Some(entry) = self.pit.take(&PitKey { content: msg.content_id, chunk }) else {
            return vec![Action::Discard { reason: "no PIT entry" }];
        };
        entry
            .previous_hops
            .into_iter()
            .map(|prev| {
                if prev == self.device {
                    Action::Failed { content: msg.content_id, chunk }
                } else {
                    self.reply(ctx, prev, msg.clone())
                }
            })
            .collect()
    }
}

/// Structural CRT next hop of `device` for content held by `provider`.
pub fn crt_next_hop(topo: &PhysicalTopology, relays: &Relays, device: DeviceId, provider: DeviceId) -> Result<Ipv4Addr, BackboneError> {
    if device == provider {
        let d = topo.device(device);
        return d.p2p.ip.or(d.wifi.ip).ok_or(BackboneError::NoRoute { from: device, to: provider });
    }
    next_hop(topo, relays, device, provider).map(|h| h.addr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::elect_relays;
    use crate::configs;
    use crate::topology::IfaceKind;

    fn fig7() -> (PhysicalTopology, Relays) {
        let loaded = configs::fig7();
        let t = loaded.addressed(0).unwrap();
        let relays = elect_relays(&t, 0, &loaded.relay_pins).unwrap();
        (t, relays)
    }

    fn id(t: &PhysicalTopology, label: &str) -> DeviceId {
        t.device_by_label(label).unwrap()
    }

    fn sends(actions: &[Action]) -> Vec<(DeviceId, MessageType)> {
        actions
            .iter()
            .filter_map(|a| match a {
                Action::Send { hop, msg } | Action::SendReliable { hop, msg } => Some((hop.to, msg.kind)),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn crt_next_hop_cases() {
        let (t, r) = fig7();
        let ip = |l: &str, k: IfaceKind| t.device(id(&t, l)).iface(k).ip.unwrap();
        let nh = |at: &str, prov: &str| crt_next_hop(&t, &r, id(&t, at), id(&t, prov)).unwrap();
        assert_eq!(nh("Client 1A", "Client 3A"), ip("Client 1B", IfaceKind::P2p));
        assert_eq!(nh("GO1", "Client 3A"), ip("Client 1B", IfaceKind::P2p));
        assert_eq!(nh("Client 1B", "Client 3A"), ip("GO2", IfaceKind::Wifi));
        assert_eq!(nh("Client 3A", "Client 1A"), GO_ADDRESS);
        assert_eq!(nh("GO3", "Client 1A"), ip("Client 2A", IfaceKind::P2p));
        assert_eq!(nh("Client 1A", "Client 1B"), ip("Client 1B", IfaceKind::P2p));
        assert_eq!(nh("Client 1A", "Client 1A"), ip("Client 1A", IfaceKind::P2p));
    }

    #[test]
    fn request_miss_at_go_notifies_requester() {
        let (t, r) = fig7();
        let ctx = RouteCtx::new(&t, &r);
        let mut go2 = NodeState::new(id(&t, "GO2"));
        let msg = CcrMessage::new(MessageType::ContentRequest, 9, ContentId::from_name("nope"), 0u32.to_be_bytes().to_vec());
        let out = go2.handle_packet(&ctx, &msg, id(&t, "Client 2A"), false, SimTime::ZERO);
        assert_eq!(sends(&out), [(id(&t, "Client 2A"), MessageType::RouteFailureNotify)]);
        assert!(go2.pit.is_empty());
    }

    #[test]
    fn data_fans_out_to_every_previous_hop() {
        let (t, r) = fig7();
        let ctx = RouteCtx::new(&t, &r);
        let go2 = id(&t, "GO2");
        let mut node = NodeState::new(go2);
        let content = ContentId::from_name("x");
        let key = PitKey { content, chunk: 0 };
        node.pit.append(key, id(&t, "Client 2A"), SimTime::from_nanos(10));
        node.pit.append(key, id(&t, "GO3"), SimTime::from_nanos(10));
        let data = CcrMessage::new(MessageType::ContentData, 1, content, encode_chunk(0, 1, b"hi"));
        let out = node.handle_packet(&ctx, &data, id(&t, "Client 1B"), false, SimTime::ZERO);
        assert_eq!(sends(&out), [(id(&t, "Client 2A"), MessageType::ContentData), (id(&t, "GO3"), MessageType::ContentData)]);
        assert!(node.pit.is_empty());
    }

    #[test]
    fn unsolicited_data_is_discarded() {
        let (t, r) = fig7();
        let ctx = RouteCtx::new(&t, &r);
        let mut node = NodeState::new(id(&t, "GO2"));
        let data = CcrMessage::new(MessageType::ContentData, 1, ContentId::from_name("x"), encode_chunk(0, 1, b""));
        let out = node.handle_packet(&ctx, &data, id(&t, "Client 1B"), false, SimTime::ZERO);
        assert!(matches!(out[..], [Action::Discard { .. }]));
    }

    #[test]
    fn duplicate_registration_only_reacks() {
        let (t, r) = fig7();
        let ctx = RouteCtx::new(&t, &r);
        let mut go1 = NodeState::new(id(&t, "GO1"));
        let reg = CcrMessage::new(MessageType::ContentRegistration, 5, ContentId::from_name("a"), b"a".to_vec());
        let first = go1.handle_packet(&ctx, &reg, id(&t, "Client 1A"), false, SimTime::ZERO);
        assert!(first.iter().any(|a| matches!(a, Action::Broadcast { .. })));
        let crt = go1.crt.clone();
        let again = go1.handle_packet(&ctx, &reg, id(&t, "Client 1A"), false, SimTime::ZERO);
        assert_eq!(sends(&again), [(id(&t, "Client 1A"), MessageType::ContentRegistrationAck)]);
        assert_eq!(go1.crt, crt);
    }

    #[test]
    fn go_registration_is_local() {
        let (t, r) = fig7();
        let ctx = RouteCtx::new(&t, &r);
        let mut go3 = NodeState::new(id(&t, "GO3"));
        let out = go3.register(&ctx, "v", b"v".to_vec(), 3);
        assert!(!out.iter().any(|a| matches!(a, Action::SendReliable { msg, .. } if msg.kind == MessageType::ContentRegistration)));
        assert!(go3.crt.get(&ContentId::from_name("v")).is_some());
    }

    #[test]
    fn own_content_is_served_locally() {
        let (t, r) = fig7();
        let ctx = RouteCtx::new(&t, &r);
        let mut c = NodeState::new(id(&t, "Client 3A"));
        c.store.insert("mine", b"abc".to_vec());
        let out = c.request(&ctx, ContentId::from_name("mine"), 0, 1, SimTime::ZERO);
        assert!(matches!(&out[..], [Action::Deliver { bytes, .. }] if bytes == b"abc"));
    }

    #[test]
    fn plain_client_without_entry_asks_its_go() {
        let (t, r) = fig7();
        let ctx = RouteCtx::new(&t, &r);
        let mut c = NodeState::new(id(&t, "Client 1A"));
        let out = c.request(&ctx, ContentId::from_name("?"), 0, 1, SimTime::ZERO);
        assert_eq!(sends(&out), [(id(&t, "GO1"), MessageType::ContentRequest)]);
        assert_eq!(c.pit.len(), 1);
    }

    #[test]
    fn adv_and_chunk_layouts_round_trip() {
        let a = AdvData { hint: GO_ADDRESS, ack_from: NO_ADDRESS, name: "n".into() };
        assert_eq!(AdvData::decode(&a.encode()), Some(a));
        assert_eq!(decode_chunk(&encode_chunk(2, 3, b"xy")), Some((2, 3, &b"xy"[..])));
        assert!(decode_chunk(&[0; 7]).is_none());
    }
}
