//! Protocol runtime: every device's state machine on one simulated network.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::message::{CcrMessage, ContentId, MessageType};
use super::node::{Action, NodeState, RouteCtx, DEFAULT_CHUNK_SIZE, DEFAULT_PIT_TIMEOUT};
use super::tables::PitKey;
use crate::backbone::{
    establish_backbone, open_envelope, transmit_hop, transmit_to_group, BackboneError, BackboneSetup, Hop, Relays,
    SessionConfig, SignalTimer,
};
use crate::netmodel::{trace_csv_string, AttemptInfo, ChannelConfig, NetEvent, NetStats, Network, TraceRecord};
use crate::time::{SimDuration, SimTime};
use crate::topology::{DeviceId, GroupId, PhysicalTopology};

pub const MESSAGES_HEADER: &str = "seq,time,type,from,to,broadcast,retransmission,msg_id,content";

#[derive(Debug, Clone, PartialEq)]
pub struct FabricConfig {
    pub channel: ChannelConfig,
    pub session: SessionConfig,
    pub pit_timeout: SimDuration,
    pub chunk_size: usize,
    /// Application-layer processing delay per receiving device.
    pub processing: BTreeMap<DeviceId, SimDuration>,
    pub seed: u64,
    pub trace: bool,
}

impl Default for FabricConfig {
    fn default() -> Self {
        FabricConfig {
            channel: ChannelConfig::ideal(),
            session: SessionConfig::default(),
            pit_timeout: DEFAULT_PIT_TIMEOUT,
            chunk_size: DEFAULT_CHUNK_SIZE,
            processing: BTreeMap::new(),
            seed: 0,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct PendingKey {
    pub sender: DeviceId,
    pub msg_id: u32,
    pub ack: MessageType,
    pub peer: DeviceId,
}

#[derive(Debug, Clone)]
enum Route {
    Hop(Hop),
    Group,
}

#[derive(Debug, Clone)]
struct Pending {
    route: Route,
    msg: CcrMessage,
    attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Job {
    Register { device: DeviceId, name: String, payload: Vec<u8> },
    Request { device: DeviceId, name: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FabricTimer {
    Signal(u64),
    Process { device: DeviceId, from: DeviceId, broadcast: bool, msg: CcrMessage },
    Retransmit { key: PendingKey, attempt: u32 },
    PitExpiry { device: DeviceId, key: PitKey },
    Job(Job),
}

impl SignalTimer for FabricTimer {
    fn signal(token: u64) -> Self {
        FabricTimer::Signal(token)
    }

    fn as_signal(&self) -> Option<u64> {
        match self {
            FabricTimer::Signal(t) => Some(*t),
            _ => None,
        }
    }
}

/// One application message put on the network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MessageRecord {
    /// 1-based position in the run.
    pub seq: usize,
    pub time: SimTime,
    pub kind: MessageType,
    pub msg_id: u32,
    pub content: ContentId,
    pub from: DeviceId,
    /// `None` for a group-wide broadcast.
    pub to: Option<DeviceId>,
    pub broadcast: bool,
    pub retransmission: bool,
    pub ip_id: u32,
}

/// A device finished processing a received message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProcessRecord {
    pub time: SimTime,
    pub device: DeviceId,
    pub from: DeviceId,
    pub kind: MessageType,
    pub msg_id: u32,
    pub content: ContentId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum FetchOutcome {
    Complete { bytes: Vec<u8> },
    RouteFailure,
    TimedOut,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FetchResult {
    pub device: DeviceId,
    pub content: ContentId,
    pub started: SimTime,
    pub finished: SimTime,
    pub outcome: FetchOutcome,
}

#[derive(Debug, Clone)]
struct Fetch {
    started: SimTime,
    count: Option<u32>,
    chunks: BTreeMap<u32, Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReliabilityFailure {
    pub time: SimTime,
    pub key_sender: DeviceId,
    pub peer: DeviceId,
    pub kind: MessageType,
    pub msg_id: u32,
    pub attempts: u32,
}

pub struct Fabric {
    net: Network<FabricTimer>,
    topo: Arc<PhysicalTopology>,
    relays: Relays,
    cfg: FabricConfig,
    nodes: Vec<NodeState>,
    pending: BTreeMap<PendingKey, Pending>,
    nonces: ChaCha8Rng,
    fetches: BTreeMap<(DeviceId, ContentId), Fetch>,
    messages: Vec<MessageRecord>,
    processed: Vec<ProcessRecord>,
    results: Vec<FetchResult>,
    failures: Vec<ReliabilityFailure>,
    errors: Vec<String>,
    discards: BTreeMap<&'static str, u64>,
}

impl Fabric {
    pub fn new(topo: Arc<PhysicalTopology>, relays: Relays, cfg: FabricConfig) -> Self {
        let net = Network::new(Arc::clone(&topo), cfg.channel.clone()).with_tracing(cfg.trace);
        let nodes = topo.devices().iter().map(|d| NodeState::new(d.id)).collect();
        let nonces = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x4e4f_4e43_4553);
        Fabric {
            net,
            topo,
            relays,
            cfg,
            nodes,
            pending: BTreeMap::new(),
            nonces,
            fetches: BTreeMap::new(),
            messages: Vec::new(),
            processed: Vec::new(),
            results: Vec::new(),
            failures: Vec::new(),
            errors: Vec::new(),
            discards: BTreeMap::new(),
        }
    }

    /// Runs GO-role notification and relay election on the network before
    /// any content traffic, then returns the ready fabric.
    pub fn establish(
        topo: Arc<PhysicalTopology>,
        pins: &Relays,
        cfg: FabricConfig,
    ) -> Result<(Self, BackboneSetup), BackboneError> {
        let mut f = Fabric::new(topo, Relays::new(), cfg);
        let setup = establish_backbone(&mut f.net, f.cfg.seed, pins, f.cfg.session)?;
        f.relays = setup.relays.clone();
        Ok((f, setup))
    }

    pub fn topology(&self) -> &PhysicalTopology {
        &self.topo
    }

    pub fn relays(&self) -> &Relays {
        &self.relays
    }

    pub fn now(&self) -> SimTime {
        self.net.now()
    }

    pub fn node(&self, d: DeviceId) -> &NodeState {
        &self.nodes[usize::from(d.0)]
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn messages(&self) -> &[MessageRecord] {
        &self.messages
    }

    pub fn processed(&self) -> &[ProcessRecord] {
        &self.processed
    }

    pub fn results(&self) -> &[FetchResult] {
        &self.results
    }

    pub fn failures(&self) -> &[ReliabilityFailure] {
        &self.failures
    }

    /// Transfers the rule engine refused; empty in a consistent backbone.
    pub fn errors(&self) -> &[String] {
        &self.errors
    }

    pub fn discards(&self) -> &BTreeMap<&'static str, u64> {
        &self.discards
    }

    pub fn net_stats(&self) -> &NetStats {
        self.net.stats()
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.net.trace()
    }

    pub fn trace_csv(&self) -> String {
        trace_csv_string(self.net.trace())
    }

    /// The application message log as CSV, one row per transmission.
    pub fn messages_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(MESSAGES_HEADER.split(',')).expect("in-memory write");
        for m in &self.messages {
            w.write_record([
                m.seq.to_string(),
                format!("{:.9}", m.time.as_secs_f64()),
                m.kind.short_name().to_string(),
                self.topo.label(m.from).to_string(),
                m.to.map_or_else(|| "*".to_string(), |d| self.topo.label(d).to_string()),
                u8::from(m.broadcast).to_string(),
                u8::from(m.retransmission).to_string(),
                format!("{:08x}", m.msg_id),
                m.content.hex(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// Fault injection: frames for which `filter` returns true are lost.
    pub fn set_drop_filter(&mut self, filter: impl FnMut(&AttemptInfo<'_>) -> bool + 'static) {
        self.net.set_drop_filter(filter);
    }

    pub fn schedule(&mut self, at: SimTime, job: Job) {
        self.net.schedule(at, FabricTimer::Job(job));
    }

    /// Registers content at `device` now.
    pub fn register(&mut self, device: DeviceId, name: &str, payload: Vec<u8>) {
        let msg_id = self.nonces.gen();
        self.dispatch(device, |node, ctx, _| node.register(ctx, name, payload, msg_id));
    }

    /// Starts fetching `name` at `device` now.
    pub fn request(&mut self, device: DeviceId, name: &str) {
        let content = ContentId::from_name(name);
        if self.fetches.contains_key(&(device, content)) {
            return;
        }
        let started = self.now();
        self.fetches.insert((device, content), Fetch { started, count: None, chunks: BTreeMap::new() });
        self.request_chunk(device, content, 0);
    }

    fn request_chunk(&mut self, device: DeviceId, content: ContentId, chunk: u32) {
        let msg_id = self.nonces.gen();
        self.dispatch(device, |node, ctx, now| node.request(ctx, content, chunk, msg_id, now));
    }

    /// Processes events until nothing is pending.
    pub fn run(&mut self) {
        while let Some(ev) = self.net.poll() {
            self.on_event(ev);
        }
    }

    /// Processes events up to and including time `until`.
    pub fn run_until(&mut self, until: SimTime) {
        while self.net.peek_time().is_some_and(|t| t <= until) {
            let ev = self.net.poll().expect("peeked");
            self.on_event(ev);
        }
    }

    fn on_event(&mut self, ev: NetEvent<FabricTimer>) {
        match ev {
            NetEvent::Received { device, from, packet } => {
                let Some(payload) = open_envelope(&self.topo, device, &packet) else { return };
                let Ok(msg) = CcrMessage::decode(payload) else {
                    *self.discards.entry("undecodable payload").or_default() += 1;
                    return;
                };
                let broadcast = packet.broadcast;
                match self.cfg.processing.get(&device).copied().filter(|d| *d > SimDuration::ZERO) {
                    Some(delay) => self.net.schedule_in(delay, FabricTimer::Process { device, from, broadcast, msg }),
                    None => self.process(device, from, broadcast, msg),
                }
            }
            NetEvent::Lost { .. } => {}
            NetEvent::Wake(t) => match t {
                FabricTimer::Signal(_) => {}
                FabricTimer::Process { device, from, broadcast, msg } => self.process(device, from, broadcast, msg),
                FabricTimer::Retransmit { key, attempt } => self.retransmit(key, attempt),
                FabricTimer::PitExpiry { device, key } => self.expire(device, key),
                FabricTimer::Job(Job::Register { device, name, payload }) => self.register(device, &name, payload),
                FabricTimer::Job(Job::Request { device, name }) => self.request(device, &name),
            },
        }
    }

    fn process(&mut self, device: DeviceId, from: DeviceId, broadcast: bool, msg: CcrMessage) {
        self.processed.push(ProcessRecord {
            time: self.now(),
            device,
            from,
            kind: msg.kind,
            msg_id: msg.msg_id,
            content: msg.content_id,
        });
        self.dispatch(device, |node, ctx, now| node.handle_packet(ctx, &msg, from, broadcast, now));
    }

    fn dispatch(&mut self, device: DeviceId, f: impl FnOnce(&mut NodeState, &RouteCtx<'_>, SimTime) -> Vec<Action>) {
        let ctx = RouteCtx {
            topo: &self.topo,
            relays: &self.relays,
            pit_timeout: self.cfg.pit_timeout,
            chunk_size: self.cfg.chunk_size,
        };
        let now = self.net.now();
        let actions = f(&mut self.nodes[usize::from(device.0)], &ctx, now);
        for a in actions {
            self.apply(device, a);
        }
    }

    fn apply(&mut self, device: DeviceId, action: Action) {
        match action {
            Action::Send { hop, msg } => self.send(device, &Route::Hop(hop), &msg, false),
            Action::SendReliable { hop, msg } => {
                let ack = msg.kind.ack().expect("reliable messages have an ACK");
                let key = PendingKey { sender: device, msg_id: msg.msg_id, ack, peer: hop.to };
                self.start_reliable(key, Route::Hop(hop), msg);
            }
            Action::Broadcast { group: _, msg, ack_from } => match ack_from {
                Some(peer) => {
                    let ack = msg.kind.ack().expect("advertisements have an ACK");
                    let key = PendingKey { sender: device, msg_id: msg.msg_id, ack, peer };
                    self.start_reliable(key, Route::Group, msg);
                }
                None => self.send(device, &Route::Group, &msg, false),
            },
            Action::Acked { msg_id, kind, from } => {
                self.pending.remove(&PendingKey { sender: device, msg_id, ack: kind, peer: from });
            }
            Action::Deliver { content, chunk, chunk_count, bytes } => self.delivered(device, content, chunk, chunk_count, bytes),
            Action::Failed { content, .. } => self.finish(device, content, FetchOutcome::RouteFailure),
            Action::ArmPit { key, deadline } => self.net.schedule(deadline, FabricTimer::PitExpiry { device, key }),
            Action::CrtUpdated { .. } => {}
            Action::Discard { reason } => *self.discards.entry(reason).or_default() += 1,
        }
    }

    fn start_reliable(&mut self, key: PendingKey, route: Route, msg: CcrMessage) {
        if self.pending.contains_key(&key) {
            return;
        }
        self.send(key.sender, &route, &msg, false);
        self.pending.insert(key, Pending { route, msg, attempts: 1 });
        self.net.schedule_in(self.cfg.session.timeout, FabricTimer::Retransmit { key, attempt: 1 });
    }

    fn retransmit(&mut self, key: PendingKey, attempt: u32) {
        let Some(p) = self.pending.get_mut(&key) else { return };
        if p.attempts != attempt {
            return;
        }
        if p.attempts > self.cfg.session.max_retries {
            let p = self.pending.remove(&key).expect("present");
            self.failures.push(ReliabilityFailure {
                time: self.net.now(),
                key_sender: key.sender,
                peer: key.peer,
                kind: p.msg.kind,
                msg_id: key.msg_id,
                attempts: p.attempts,
            });
            return;
        }
        p.attempts += 1;
        let (route, msg, n) = (p.route.clone(), p.msg.clone(), p.attempts);
        self.send(key.sender, &route, &msg, true);
        self.net.schedule_in(self.cfg.session.timeout, FabricTimer::Retransmit { key, attempt: n });
    }

    fn send(&mut self, device: DeviceId, route: &Route, msg: &CcrMessage, retransmission: bool) {
        let bytes = match msg.encode() {
            Ok(b) => b,
            Err(e) => {
                self.errors.push(format!("{device}: {e}"));
                return;
            }
        };
        let (res, to, broadcast) = match route {
            Route::Hop(h) => (transmit_hop(&mut self.net, h, &bytes), Some(h.to), h.is_broadcast()),
            Route::Group => (transmit_to_group(&mut self.net, device, &bytes), None, true),
        };
        match res {
            Ok(ip_id) => self.messages.push(MessageRecord {
                seq: self.messages.len() + 1,
                time: self.net.now(),
                kind: msg.kind,
                msg_id: msg.msg_id,
                content: msg.content_id,
                from: device,
                to,
                broadcast,
                retransmission,
                ip_id,
            }),
            Err(e) => self.errors.push(format!("{} -> {:?}: {e}", self.topo.label(device), to)),
        }
    }

    fn delivered(&mut self, device: DeviceId, content: ContentId, chunk: u32, count: u32, bytes: Vec<u8>) {
        let Some(f) = self.fetches.get_mut(&(device, content)) else { return };
        let first = f.count.is_none();
        f.count = Some(count);
        f.chunks.insert(chunk, bytes);
        if f.chunks.len() as u32 == count {
            let f = self.fetches.remove(&(device, content)).expect("present");
            let bytes = f.chunks.into_values().flatten().collect();
            self.results.push(FetchResult {
                device,
                content,
                started: f.started,
                finished: self.net.now(),
                outcome: FetchOutcome::Complete { bytes },
            });
        } else if first {
            for c in 1..count {
                if c != chunk {
                    self.request_chunk(device, content, c);
                }
            }
        }
    }

    fn finish(&mut self, device: DeviceId, content: ContentId, outcome: FetchOutcome) {
        if let Some(f) = self.fetches.remove(&(device, content)) {
            self.results.push(FetchResult { device, content, started: f.started, finished: self.net.now(), outcome });
        }
    }

    fn expire(&mut self, device: DeviceId, key: PitKey) {
        let now = self.net.now();
        if let Some(e) = self.nodes[usize::from(device.0)].pit.expire(&key, now) {
            if e.previous_hops.contains(&device) {
                self.finish(device, key.content, FetchOutcome::TimedOut);
            }
        }
    }

    /// Sum of PIT entries across devices.
    pub fn pending_interests(&self) -> usize {
        self.nodes.iter().map(|n| n.pit.len()).sum()
    }

    /// Devices whose CRT knows `content`.
    pub fn holders(&self, content: &ContentId) -> Vec<DeviceId> {
        self.nodes.iter().filter(|n| n.crt.get(content).is_some()).map(|n| n.device).collect()
    }

    pub fn group_of(&self, d: DeviceId) -> Option<GroupId> {
        self.topo.home_group(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::elect_relays;
    use crate::configs;
    use crate::topology::LoadedTopology;

    fn fabric(loaded: LoadedTopology, cfg: FabricConfig) -> Fabric {
        let t = loaded.addressed(cfg.seed).unwrap();
        let relays = elect_relays(&t, cfg.seed, &loaded.relay_pins).unwrap();
        Fabric::new(Arc::new(t), relays, cfg)
    }

    fn dev(f: &Fabric, label: &str) -> DeviceId {
        f.topology().device_by_label(label).unwrap()
    }

    fn sequence(f: &Fabric) -> Vec<String> {
        let t = f.topology();
        f.messages()
            .iter()
            .map(|m| {
                let to = m.to.map_or("*".to_string(), |d| t.label(d).to_string());
                format!("{} {}->{}", m.kind.short_name(), t.label(m.from), to)
            })
            .collect()
    }

    #[test]
    fn registration_on_the_testbed_takes_seven_messages() {
        let mut f = fabric(configs::testbed(), FabricConfig::default());
        f.register(dev(&f, "Client 1A"), "song", b"la".to_vec());
        f.run();
        assert_eq!(
            sequence(&f),
            [
                "REG Client 1A->GO1",
                "REG_ACK GO1->Client 1A",
                "ADV GO1->*",
                "ADV_ACK Client 1B->GO1",
                "ADV Client 1B->GO2",
                "ADV_ACK GO2->Client 1B",
                "ADV GO2->*",
            ]
        );
        let id = ContentId::from_name("song");
        assert_eq!(f.holders(&id).len(), 5);
        assert!(f.errors().is_empty() && f.failures().is_empty());
    }

    #[test]
    fn broadcast_count_ignores_group_size() {
        let mut text = configs::TESTBED.to_string();
        let extra: Vec<String> = (0..8).map(|i| format!("\"X{i}\"")).collect();
        text = text.replacen("\"Client 2A\"]\n", &format!("\"Client 2A\", {}]\n", extra.join(", ")), 1);
        text = text.replace("p2p_clients = [\"Client 1A\", \"Client 1B\"]", &format!("p2p_clients = [\"Client 1A\", \"Client 1B\", {}]", extra.join(", ")));
        let loaded = crate::topology::TopologyConfig::parse(&text).unwrap().resolve().unwrap();
        assert_eq!(loaded.topology.groups()[0].client_count(), 11);
        let mut f = fabric(loaded, FabricConfig::default());
        f.register(dev(&f, "Client 1A"), "song", b"la".to_vec());
        f.run();
        assert_eq!(f.messages().len(), 7);
        assert_eq!(f.messages().iter().filter(|m| m.broadcast).count(), 2);
        assert_eq!(f.holders(&ContentId::from_name("song")).len(), 13);
    }

    #[test]
    fn fetch_across_three_groups_both_ways() {
        let mut f = fabric(configs::fig7(), FabricConfig::default());
        let payload: Vec<u8> = (0..5000u32).map(|i| (i * 7) as u8).collect();
        f.register(dev(&f, "Client 3A"), "far", payload.clone());
        f.register(dev(&f, "Client 1A"), "near", b"back".to_vec());
        f.run();
        for d in f.topology().devices() {
            assert!(f.node(d.id).crt.get(&ContentId::from_name("far")).is_some(), "{}", d.label);
            assert!(f.node(d.id).crt.get(&ContentId::from_name("near")).is_some(), "{}", d.label);
        }
        f.request(dev(&f, "Client 1A"), "far");
        f.request(dev(&f, "Client 3A"), "near");
        f.run();
        assert_eq!(f.results().len(), 2);
        for r in f.results() {
            let want = if r.content == ContentId::from_name("far") { payload.clone() } else { b"back".to_vec() };
            assert_eq!(r.outcome, FetchOutcome::Complete { bytes: want });
        }
        assert_eq!(f.pending_interests(), 0);
        assert!(f.errors().is_empty());
    }

    #[test]
    fn unknown_content_fails_back_to_requester() {
        let mut f = fabric(configs::fig7(), FabricConfig::default());
        f.request(dev(&f, "Client 1A"), "missing");
        f.run();
        assert_eq!(f.results()[0].outcome, FetchOutcome::RouteFailure);
        assert_eq!(f.pending_interests(), 0);
    }

    #[test]
    fn lost_ack_is_retransmitted() {
        let mut f = fabric(configs::testbed(), FabricConfig::default());
        let first = std::cell::Cell::new(true);
        f.net.set_drop_filter(move |a| {
            let drop = first.get() && a.packet.payload.first() == Some(&(MessageType::ContentRegistrationAck as u8));
            if drop && a.attempt >= 4 {
                first.set(false);
            }
            drop
        });
        f.register(dev(&f, "Client 1A"), "s", b"s".to_vec());
        f.run();
        let regs = f.messages().iter().filter(|m| m.kind == MessageType::ContentRegistration).count();
        assert_eq!(regs, 2);
        assert_eq!(f.holders(&ContentId::from_name("s")).len(), 5);
    }
}
