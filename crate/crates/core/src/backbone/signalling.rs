//! Backbone signalling: GO-role notification, relay election and the
//! stop-and-wait exchange they share.
//!
//! These exchanges run before any content traffic, one at a time, on an
//! otherwise quiet network. Intermediate devices forward at the application
//! layer without processing delay.

use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    build_tunnels, elect_relays, eligible_relays, hop_between, open_envelope, transmit_hop, BackboneError, Hop,
    Relays, Tunnel, TunnelMode,
};
use crate::content_routing::message::{CcrMessage, ContentId, MessageType};
use crate::netmodel::{NetEvent, Network};
use crate::time::{SimDuration, SimTime};
use crate::topology::{DeviceId, GroupId, Role};

/// Timer payloads the signalling layer can schedule on a network.
pub trait SignalTimer: Sized {
    fn signal(token: u64) -> Self;
    fn as_signal(&self) -> Option<u64>;
}

impl SignalTimer for u64 {
    fn signal(token: u64) -> Self {
        token
    }

    fn as_signal(&self) -> Option<u64> {
        Some(*self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SessionConfig {
    pub timeout: SimDuration,
    pub max_retries: u32,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig { timeout: SimDuration::from_millis(500), max_retries: 3 }
    }
}

/// Stop-and-wait state between two peers: one message in flight at a time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReliableSession {
    pub from: DeviceId,
    pub to: DeviceId,
    pub cfg: SessionConfig,
    pub next_seq: u32,
}

impl ReliableSession {
    pub fn new(from: DeviceId, to: DeviceId, cfg: SessionConfig) -> Self {
        ReliableSession { from, to, cfg, next_seq: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DeliveryReport {
    /// Transmissions of the message by its originator, first one included.
    pub attempts: u32,
    /// IP packets carrying the message, counting relayed hops.
    pub data_packets: u32,
    pub ack_packets: u32,
    pub broadcasts: u32,
    pub started: SimTime,
    pub completed: SimTime,
}

/// Sends `msg` along `forward`, waits for the acknowledgement along
/// `reverse` and retransmits on timeout. `on_deliver` runs at the far end on
/// every copy that arrives.
pub fn reliable_send<U: SignalTimer>(
    net: &mut Network<U>,
    session: &mut ReliableSession,
    forward: &[Hop],
    reverse: &[Hop],
    msg: &CcrMessage,
    mut on_deliver: impl FnMut(&CcrMessage),
) -> Result<DeliveryReport, BackboneError> {
    assert!(!forward.is_empty() && !reverse.is_empty(), "routes must be non-empty");
    let ack_kind = msg.kind.ack().expect("reliable messages have an ACK type");
    let ack = msg.ack_for().expect("ack type exists");
    let bytes = msg.encode().expect("signalling messages are small");
    let ack_bytes = ack.encode().expect("ACKs are small");
    let token = |attempt: u32| (u64::from(msg.msg_id) << 32) | u64::from(attempt);
    session.next_seq = session.next_seq.wrapping_add(1);

    let mut report = DeliveryReport {
        attempts: 0,
        data_packets: 0,
        ack_packets: 0,
        broadcasts: 0,
        started: net.now(),
        completed: net.now(),
    };
    let send = |net: &mut Network<U>, hop: &Hop, payload: &[u8], report: &mut DeliveryReport, data: bool| {
        if data {
            report.data_packets += 1;
        } else {
            report.ack_packets += 1;
        }
        if hop.is_broadcast() {
            report.broadcasts += 1;
        }
        transmit_hop(net, hop, payload).map(|_| ())
    };

    report.attempts = 1;
    send(net, &forward[0], &bytes, &mut report, true)?;
    net.schedule_in(session.cfg.timeout, U::signal(token(1)));

    while let Some(ev) = net.poll() {
        match ev {
            NetEvent::Received { device, packet, .. } => {
                let topo = net.topology_arc();
                let Some(payload) = open_envelope(&topo, device, &packet) else { continue };
                let Ok(m) = CcrMessage::decode(payload) else { continue };
                if m.msg_id != msg.msg_id {
                    continue;
                }
                if m.kind == msg.kind {
                    let Some(i) = forward.iter().position(|h| h.to == device) else { continue };
                    if i + 1 < forward.len() {
                        send(net, &forward[i + 1], &bytes, &mut report, true)?;
                    } else {
                        on_deliver(&m);
                        send(net, &reverse[0], &ack_bytes, &mut report, false)?;
                    }
                } else if m.kind == ack_kind {
                    let Some(j) = reverse.iter().position(|h| h.to == device) else { continue };
                    if j + 1 < reverse.len() {
                        send(net, &reverse[j + 1], &ack_bytes, &mut report, false)?;
                    } else if device == session.from {
                        report.completed = net.now();
                        return Ok(report);
                    }
                }
            }
            NetEvent::Lost { .. } => {}
            NetEvent::Wake(u) => {
                if u.as_signal() != Some(token(report.attempts)) {
                    continue;
                }
                if report.attempts > session.cfg.max_retries {
                    return Err(BackboneError::PeerUnreachable { peer: session.to, attempts: report.attempts });
                }
                report.attempts += 1;
                send(net, &forward[0], &bytes, &mut report, true)?;
                net.schedule_in(session.cfg.timeout, U::signal(token(report.attempts)));
            }
        }
    }
    unreachable!("a retransmission timer is always pending")
}

/// Tells the parent GO that `bridge` owns a group of its own.
///
/// The bridge cannot reach its parent GO directly (loopback capture) and the
/// parent cannot answer directly (source conflict), so the exchange goes
/// through the parent group's lowest-id P2P client.
pub fn notify_go_role<U: SignalTimer>(
    net: &mut Network<U>,
    bridge: DeviceId,
    cfg: SessionConfig,
    msg_id: u32,
) -> Result<(DeviceId, DeliveryReport), BackboneError> {
    let topo = net.topology_arc();
    let (parent, role) = topo.client_group(bridge).ok_or(BackboneError::NotABridge(bridge))?;
    let Some(own) = topo.owned_group(bridge) else { return Err(BackboneError::NotABridge(bridge)) };
    if role != Role::LegacyClient {
        return Err(BackboneError::NotABridge(bridge));
    }
    let parent_go = topo.group(parent).owner;
    let proxy = *eligible_relays(&topo, parent).first().ok_or(BackboneError::NoEligibleRelay(parent))?;
    let hop = |a, b| hop_between(&topo, a, b).expect("members of one group");
    let forward = [hop(bridge, proxy), hop(proxy, parent_go)];
    let reverse = [hop(parent_go, proxy), hop(proxy, bridge)];

    let wifi = topo.device(bridge).wifi.ip.expect("bridge has a Wi-Fi address");
    let mut data = wifi.octets().to_vec();
    data.extend_from_slice(&own.0.to_be_bytes());
    let msg = CcrMessage::new(MessageType::GoRoleNotify, msg_id, ContentId::default(), data);
    let mut session = ReliableSession::new(bridge, parent_go, cfg);
    let report = reliable_send(net, &mut session, &forward, &reverse, &msg, |_| {})?;
    Ok((parent_go, report))
}

/// The GO announces the chosen relay in a broadcast naming its address; the
/// relay answers with a unicast ACK.
pub fn run_relay_election<U: SignalTimer>(
    net: &mut Network<U>,
    group: GroupId,
    relay: DeviceId,
    cfg: SessionConfig,
    msg_id: u32,
) -> Result<DeliveryReport, BackboneError> {
    let topo = net.topology_arc();
    let go = topo.group(group).owner;
    let addr: Ipv4Addr = topo.addr_in_group(relay, group).ok_or(BackboneError::NoEligibleRelay(group))?;
    let forward = [Hop { from: go, to: relay, addr, mode: TunnelMode::BroadcastDown, group }];
    let reverse = [hop_between(&topo, relay, go).expect("relay is a member")];
    let msg = CcrMessage::new(MessageType::RelayElection, msg_id, ContentId::default(), addr.octets().to_vec());
    let mut session = ReliableSession::new(go, relay, cfg);
    reliable_send(net, &mut session, &forward, &reverse, &msg, |_| {})
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BackboneSetup {
    pub relays: Relays,
    pub tunnels: Vec<Tunnel>,
    /// (bridge GO, parent GO, report) per notification.
    pub notifications: Vec<(DeviceId, DeviceId, DeliveryReport)>,
    /// (group, relay, report) per election.
    pub elections: Vec<(GroupId, DeviceId, DeliveryReport)>,
}

/// Runs every GO-role notification, then every relay election, then builds
/// the tunnel set.
pub fn establish_backbone<U: SignalTimer>(
    net: &mut Network<U>,
    seed: u64,
    pins: &Relays,
    cfg: SessionConfig,
) -> Result<BackboneSetup, BackboneError> {
    let topo = net.topology_arc();
    let mut nonces = ChaCha8Rng::seed_from_u64(seed ^ 0x5349_474e);
    let mut notifications = Vec::new();
    for link in topo.bridge_links() {
        let (parent_go, report) = notify_go_role(net, link.bridge, cfg, nonces.gen())?;
        notifications.push((link.bridge, parent_go, report));
    }
    let relays = elect_relays(&topo, seed, pins)?;
    let mut elections = Vec::new();
    for (&group, &relay) in &relays {
        let report = run_relay_election(net, group, relay, cfg, nonces.gen())?;
        elections.push((group, relay, report));
    }
    let tunnels = build_tunnels(&topo, &relays)?;
    Ok(BackboneSetup { relays, tunnels, notifications, elections })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configs;
    use crate::netmodel::ChannelConfig;
    use std::sync::Arc;

    fn net(cfg: ChannelConfig) -> Network<u64> {
        Network::new(Arc::new(configs::fig7().addressed(0).unwrap()), cfg).with_tracing(true)
    }

    fn id(n: &Network<u64>, l: &str) -> DeviceId {
        n.topology().device_by_label(l).unwrap()
    }

    #[test]
    fn go_role_notification_reaches_parent_go() {
        let mut n = net(ChannelConfig::ideal());
        let (go1, go2) = (id(&n, "GO1"), id(&n, "GO2"));
        let (parent, r) = notify_go_role(&mut n, go2, SessionConfig::default(), 7).unwrap();
        assert_eq!(parent, go1);
        assert_eq!((r.attempts, r.data_packets, r.ack_packets, r.broadcasts), (1, 2, 2, 0));
        // GO2 is itself a bridge, so its own notification ACK to GO3 goes down as a broadcast.
        let go3 = id(&n, "GO3");
        let (_, r) = notify_go_role(&mut n, go3, SessionConfig::default(), 8).unwrap();
        assert_eq!(r.broadcasts, 1);
    }

    #[test]
    fn lost_ack_triggers_one_retransmission() {
        let mut n = net(ChannelConfig::ideal());
        let go1 = id(&n, "GO1");
        // Kill every MAC attempt of the first ACK packet GO1 sends.
        let mut victim = None;
        n.set_drop_filter(move |a| {
            let ack = CcrMessage::decode(&a.packet.payload).map(|m| m.kind == MessageType::GoRoleNotifyAck);
            if a.transmitter == go1 && ack == Ok(true) && victim.is_none() {
                victim = Some(a.packet.ip_id);
            }
            victim == Some(a.packet.ip_id)
        });
        let go2 = id(&n, "GO2");
        let (_, r) = notify_go_role(&mut n, go2, SessionConfig::default(), 1).unwrap();
        assert_eq!(r.attempts, 2);
        assert!(r.completed.saturating_since(r.started) >= SimDuration::from_millis(500));
    }

    #[test]
    fn non_bridge_is_not_notified() {
        let mut n = net(ChannelConfig::ideal());
        let c = id(&n, "Client 1A");
        assert_eq!(notify_go_role(&mut n, c, SessionConfig::default(), 1), Err(BackboneError::NotABridge(c)));
        let go1 = id(&n, "GO1");
        assert_eq!(notify_go_role(&mut n, go1, SessionConfig::default(), 1), Err(BackboneError::NotABridge(go1)));
        assert_eq!(n.stats().ip_sent, 0);
    }

    #[test]
    fn election_is_a_broadcast_acked_by_unicast() {
        let mut n = net(ChannelConfig::ideal());
        let b = id(&n, "Client 1B");
        let r = run_relay_election(&mut n, GroupId(1), b, SessionConfig::default(), 3).unwrap();
        assert_eq!((r.attempts, r.data_packets, r.ack_packets, r.broadcasts), (1, 1, 1, 1));
        let ip_rows: Vec<_> = n.trace().iter().filter(|r| r.layer == crate::netmodel::Layer::Ip).collect();
        assert_eq!(ip_rows[0].dst, "192.168.49.255");
    }

    #[test]
    fn lost_election_broadcast_is_retransmitted_after_timeout() {
        let mut n = net(ChannelConfig::ideal());
        let mut first = true;
        n.set_drop_filter(move |a| std::mem::replace(&mut first, false) && a.frame.is_broadcast());
        let b = id(&n, "Client 1B");
        let r = run_relay_election(&mut n, GroupId(1), b, SessionConfig::default(), 3).unwrap();
        assert_eq!(r.attempts, 2);
        assert_eq!(r.broadcasts, 2);
    }

    #[test]
    fn seeded_loss_drives_retransmissions() {
        // Broadcast attempts fail with probability 0.5^(1/5) ≈ 0.87 here.
        let mut n = net(ChannelConfig { frame_loss_prob: 0.5, ..ChannelConfig::default() }.with_seed(1));
        let b = id(&n, "Client 1B");
        let cfg = SessionConfig { max_retries: 50, ..SessionConfig::default() };
        let r = run_relay_election(&mut n, GroupId(1), b, cfg, 3).unwrap();
        assert!(r.attempts > 1);
    }

    #[test]
    fn total_loss_is_peer_unreachable() {
        let mut n = net(ChannelConfig::ideal());
        n.set_drop_filter(|_| true);
        let b = id(&n, "Client 1B");
        let err = run_relay_election(&mut n, GroupId(1), b, SessionConfig::default(), 3).unwrap_err();
        assert_eq!(err, BackboneError::PeerUnreachable { peer: b, attempts: 4 });
        assert_eq!(n.now(), SimTime::ZERO + SimDuration::from_millis(2000));
    }

    #[test]
    fn full_setup_on_fig7() {
        let loaded = configs::fig7();
        let mut n = Network::<u64>::new(Arc::new(loaded.addressed(0).unwrap()), ChannelConfig::ideal());
        let setup = establish_backbone(&mut n, 0, &loaded.relay_pins, SessionConfig::default()).unwrap();
        assert_eq!(setup.notifications.len(), 2);
        assert_eq!(setup.elections.len(), 3);
        assert!(setup.elections.iter().all(|(_, _, r)| r.attempts == 1));
        let t = n.topology();
        let relays: Vec<&str> = setup.relays.values().map(|&d| t.label(d)).collect();
        assert_eq!(relays, ["Client 1B", "Client 2A", "Client 3A"]);
    }
}
