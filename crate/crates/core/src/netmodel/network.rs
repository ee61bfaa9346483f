//! Discrete-event network: the delivery rules on top of one shared channel.
//!
//! Every device owns a FIFO transmit queue. Whenever the channel goes idle
//! the head-of-line frame that has waited longest at the head of its queue
//! is transmitted; ties go to the lower device id, then the older frame.
//! With saturated senders this is round robin, so an n-hop pipeline gets
//! 1/n of the channel.
//!
//! The network is pull-driven: callers `poll()` for the next event, react,
//! and may send or schedule more work before polling again.

use std::collections::{BTreeMap, VecDeque};
use std::net::Ipv4Addr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use super::channel::{frame_airtime, ChannelConfig};
use super::rules::{DeliveryRules, DeliveryVerdict, IpPacket, MacFrame, NetError, Outcome};
use super::trace::{Layer, TraceRecord};
use crate::time::{SimDuration, SimTime};
use crate::topology::{DeviceId, PhysicalTopology};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NetEvent<U> {
    /// An IP packet reached `device`; `from` is the originating device.
    Received { device: DeviceId, from: DeviceId, packet: Arc<IpPacket> },
    /// An IP packet sent by `sender` died on the way.
    Lost { sender: DeviceId, packet: Arc<IpPacket>, reason: LossReason },
    Wake(U),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LossReason {
    Channel,
    QueueOverflow,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SendError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("transfer blocked: {}", .0.label())]
    Blocked(Outcome),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct NetStats {
    pub ip_sent: u64,
    pub ip_blocked: u64,
    pub ip_delivered: u64,
    pub ip_lost: u64,
    pub queue_drops: u64,
    pub unicast_frames: u64,
    pub unicast_delivered: u64,
    pub unicast_lost: u64,
    pub broadcast_frames: u64,
    pub broadcast_delivered: u64,
    pub broadcast_lost: u64,
    /// Transmission attempts including retries.
    pub mac_attempts: u64,
    pub mac_retries: u64,
}

/// What a drop filter sees for each transmission attempt.
#[derive(Debug, Clone, Copy)]
pub struct AttemptInfo<'a> {
    pub transmitter: DeviceId,
    pub frame: &'a MacFrame,
    pub packet: &'a IpPacket,
    /// 0 for the first attempt.
    pub attempt: u32,
}

/// Returns true to force the attempt to fail.
pub type DropFilter = Box<dyn FnMut(&AttemptInfo<'_>) -> bool>;

struct Transfer {
    sender: DeviceId,
    packet: Arc<IpPacket>,
    hops: Vec<(DeviceId, MacFrame)>,
    receivers: Vec<DeviceId>,
    discarded: Vec<DeviceId>,
}

#[derive(Clone, Copy)]
struct Queued {
    ip_id: u32,
    hop: usize,
    frame_id: u64,
    attempts: u32,
}

#[derive(Default)]
struct TxQueue {
    frames: VecDeque<Queued>,
    head_since: SimTime,
}

enum Internal<U> {
    /// Arbitration runs after every other event of the same instant so that
    /// simultaneous submissions contend on equal terms.
    Arbitrate,
    TxEnd { device: DeviceId, lost: bool },
    Wake(U),
}

pub struct Network<U> {
    topo: Arc<PhysicalTopology>,
    cfg: ChannelConfig,
    attempt_loss: f64,
    rng: ChaCha8Rng,
    now: SimTime,
    seq: u64,
    events: BTreeMap<(SimTime, u64), Internal<U>>,
    ready: VecDeque<NetEvent<U>>,
    queues: BTreeMap<DeviceId, TxQueue>,
    transfers: BTreeMap<u32, Transfer>,
    busy: bool,
    arbitration_pending: bool,
    next_ip_id: u32,
    next_frame_id: u64,
    stats: NetStats,
    tracing: bool,
    trace: Vec<TraceRecord>,
    drop_filter: Option<DropFilter>,
}

impl<U> Network<U> {
    pub fn new(topo: Arc<PhysicalTopology>, cfg: ChannelConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Network {
            topo,
            attempt_loss: cfg.attempt_loss_prob(),
            cfg,
            rng,
            now: SimTime::ZERO,
            seq: 0,
            events: BTreeMap::new(),
            ready: VecDeque::new(),
            queues: BTreeMap::new(),
            transfers: BTreeMap::new(),
            busy: false,
            arbitration_pending: false,
            next_ip_id: 1,
            next_frame_id: 0,
            stats: NetStats::default(),
            tracing: false,
            trace: Vec::new(),
            drop_filter: None,
        }
    }

    pub fn with_tracing(mut self, on: bool) -> Self {
        self.tracing = on;
        self
    }

    pub fn set_drop_filter(&mut self, filter: impl FnMut(&AttemptInfo<'_>) -> bool + 'static) {
        self.drop_filter = Some(Box::new(filter));
    }

    pub fn clear_drop_filter(&mut self) {
        self.drop_filter = None;
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn topology(&self) -> &PhysicalTopology {
        &self.topo
    }

    pub fn topology_arc(&self) -> Arc<PhysicalTopology> {
        Arc::clone(&self.topo)
    }

    pub fn channel(&self) -> &ChannelConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &NetStats {
        &self.stats
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        std::mem::take(&mut self.trace)
    }

    /// True when nothing is queued, on air or scheduled.
    pub fn is_idle(&self) -> bool {
        self.events.is_empty() && self.ready.is_empty()
    }

    pub fn schedule(&mut self, at: SimTime, user: U) {
        let at = at.max(self.now);
        self.push(at, Internal::Wake(user));
    }

    pub fn schedule_in(&mut self, delay: SimDuration, user: U) {
        self.push(self.now + delay, Internal::Wake(user));
    }

    fn push(&mut self, at: SimTime, ev: Internal<U>) {
        self.seq += 1;
        self.events.insert((at, self.seq), ev);
    }

    /// Submits a unicast packet. Rule-blocked transfers are traced and
    /// returned as errors; accepted ones yield their IP identifier.
    pub fn send_unicast(&mut self, sender: DeviceId, dst_ip: Ipv4Addr, payload: Vec<u8>) -> Result<u32, SendError> {
        let ip_id = self.next_ip_id;
        let verdict = DeliveryRules::new(&self.topo).deliver_unicast(sender, dst_ip, payload, ip_id)?;
        self.submit(sender, verdict)
    }

    /// Submits a group-owner broadcast into its own group.
    pub fn send_broadcast(&mut self, go: DeviceId, payload: Vec<u8>) -> Result<u32, SendError> {
        let ip_id = self.next_ip_id;
        let verdict = DeliveryRules::new(&self.topo).deliver_broadcast(go, payload, ip_id)?;
        self.submit(go, verdict)
    }

    fn submit(&mut self, sender: DeviceId, verdict: DeliveryVerdict) -> Result<u32, SendError> {
        let ip_id = self.next_ip_id;
        self.next_ip_id = self.next_ip_id.wrapping_add(1);
        let DeliveryVerdict { outcome, mac_hops, discarded, packet } = verdict;
        let receivers = match outcome {
            Outcome::Delivered(r) => r,
            other => {
                self.stats.ip_blocked += 1;
                self.trace_ip(&packet, other.label());
                return Err(SendError::Blocked(other));
            }
        };
        self.stats.ip_sent += 1;
        let first = mac_hops[0].0;
        let packet = Arc::new(packet);
        self.transfers.insert(ip_id, Transfer { sender, packet, hops: mac_hops, receivers, discarded });
        self.enqueue(first, ip_id, 0);
        self.try_start();
        Ok(ip_id)
    }

    fn enqueue(&mut self, device: DeviceId, ip_id: u32, hop: usize) {
        let cap = self.cfg.queue_capacity;
        let q = self.queues.entry(device).or_default();
        if q.frames.len() >= cap {
            self.stats.queue_drops += 1;
            self.stats.ip_lost += 1;
            let t = self.transfers.remove(&ip_id).expect("transfer exists");
            self.trace_ip(&t.packet, "queue-overflow");
            self.ready.push_back(NetEvent::Lost { sender: t.sender, packet: t.packet, reason: LossReason::QueueOverflow });
            return;
        }
        if q.frames.is_empty() {
            q.head_since = self.now;
        }
        self.next_frame_id += 1;
        q.frames.push_back(Queued { ip_id, hop, frame_id: self.next_frame_id, attempts: 0 });
    }

    fn try_start(&mut self) {
        if !self.busy && !self.arbitration_pending {
            self.arbitration_pending = true;
            self.push(self.now, Internal::Arbitrate);
        }
    }

    fn arbitrate(&mut self) {
        self.arbitration_pending = false;
        if self.busy {
            return;
        }
        let pick = self
            .queues
            .iter()
            .filter_map(|(&d, q)| q.frames.front().map(|f| ((q.head_since, d, f.frame_id), d)))
            .min_by_key(|(k, _)| *k)
            .map(|(_, d)| d);
        let Some(device) = pick else { return };
        let head = *self.queues[&device].frames.front().expect("non-empty");
        let transfer = &self.transfers[&head.ip_id];
        let (tx, frame) = transfer.hops[head.hop];
        debug_assert_eq!(tx, device);

        let mut lost = self.attempt_loss > 0.0 && self.rng.gen::<f64>() < self.attempt_loss;
        if let Some(filter) = self.drop_filter.as_mut() {
            let info = AttemptInfo { transmitter: device, frame: &frame, packet: &transfer.packet, attempt: head.attempts };
            lost |= filter(&info);
        }
        self.stats.mac_attempts += 1;
        if head.attempts > 0 {
            self.stats.mac_retries += 1;
        }
        let airtime = frame_airtime(frame.size, frame.is_broadcast(), &self.cfg);
        self.busy = true;
        self.push(self.now + airtime, Internal::TxEnd { device, lost });
    }

    /// Next event in time order, or `None` once the simulation is quiescent.
    pub fn poll(&mut self) -> Option<NetEvent<U>> {
        loop {
            if let Some(ev) = self.ready.pop_front() {
                return Some(ev);
            }
            let ((at, _), ev) = self.events.pop_first()?;
            self.now = at;
            match ev {
                Internal::Wake(u) => return Some(NetEvent::Wake(u)),
                Internal::Arbitrate => self.arbitrate(),
                Internal::TxEnd { device, lost } => self.finish(device, lost),
            }
        }
    }

    /// Time of the next pending event, if any.
    pub fn peek_time(&self) -> Option<SimTime> {
        if !self.ready.is_empty() {
            return Some(self.now);
        }
        self.events.keys().next().map(|(t, _)| *t)
    }

    fn finish(&mut self, device: DeviceId, lost: bool) {
        self.busy = false;
        let retry_limit = self.cfg.mac_retry_limit;
        let q = self.queues.get_mut(&device).expect("transmitting queue exists");
        let head = q.frames.front_mut().expect("transmitting frame is at head");
        head.attempts += 1;
        let Queued { ip_id, hop, attempts, .. } = *head;
        let frame = self.transfers[&ip_id].hops[hop].1;
        let broadcast = frame.is_broadcast();

        let final_loss = lost && (broadcast || attempts > retry_limit);
        if lost && !final_loss {
            self.trace_mac(&frame, "retry");
            self.try_start();
            return;
        }
        q.frames.pop_front();
        q.head_since = self.now;
        if broadcast {
            self.stats.broadcast_frames += 1;
        } else {
            self.stats.unicast_frames += 1;
        }

        if final_loss {
            if broadcast {
                self.stats.broadcast_lost += 1;
            } else {
                self.stats.unicast_lost += 1;
            }
            self.stats.ip_lost += 1;
            self.trace_mac(&frame, "lost");
            let t = self.transfers.remove(&ip_id).expect("transfer exists");
            self.trace_ip(&t.packet, Outcome::LostOnChannel.label());
            self.ready.push_back(NetEvent::Lost { sender: t.sender, packet: t.packet, reason: LossReason::Channel });
        } else {
            if broadcast {
                self.stats.broadcast_delivered += 1;
            } else {
                self.stats.unicast_delivered += 1;
            }
            self.trace_mac(&frame, "ok");
            let next = self.transfers[&ip_id].hops.get(hop + 1).map(|(d, _)| *d);
            match next {
                Some(relay) => self.enqueue(relay, ip_id, hop + 1),
                None => self.complete(ip_id),
            }
        }
        self.try_start();
    }

    fn complete(&mut self, ip_id: u32) {
        let t = self.transfers.remove(&ip_id).expect("transfer exists");
        self.stats.ip_delivered += 1;
        self.trace_ip(&t.packet, "delivered");
        if self.tracing {
            for &d in &t.discarded {
                let dst = self.topo.device(d).addresses().map(|a| a.to_string()).collect::<Vec<_>>().join("|");
                self.trace.push(TraceRecord {
                    time: self.now,
                    layer: Layer::Ip,
                    src: t.packet.src_ip.to_string(),
                    dst,
                    ta: String::new(),
                    ra: String::new(),
                    size: t.packet.size(),
                    outcome: "discarded-source-conflict".into(),
                    ip_id,
                });
            }
        }
        for &r in &t.receivers {
            self.ready.push_back(NetEvent::Received { device: r, from: t.sender, packet: Arc::clone(&t.packet) });
        }
    }

    fn trace_mac(&mut self, f: &MacFrame, outcome: &str) {
        if self.tracing {
            self.trace.push(TraceRecord {
                time: self.now,
                layer: Layer::Mac,
                src: f.sa.to_string(),
                dst: f.da.to_string(),
                ta: f.ta.to_string(),
                ra: f.ra.to_string(),
                size: f.size,
                outcome: outcome.into(),
                ip_id: f.ip_id,
            });
        }
    }

    fn trace_ip(&mut self, p: &IpPacket, outcome: &str) {
        if self.tracing {
            self.trace.push(TraceRecord {
                time: self.now,
                layer: Layer::Ip,
                src: p.src_ip.to_string(),
                dst: p.dst_ip.to_string(),
                ta: String::new(),
                ra: String::new(),
                size: p.size(),
                outcome: outcome.into(),
                ip_id: p.ip_id,
            });
        }
    }
}
