//! The logical backbone: relay clients, tunnels and structural routing.
//!
//! Direct IP transfers between a bridge GO and its own clients, and between
//! neighbouring GOs, are impossible. Every group therefore elects a relay
//! client, and traffic between groups travels GO ↔ relay ↔ bridge GO. The
//! resulting tunnel graph over GOs and relays is a tree.

mod signalling;

pub use signalling::{
    establish_backbone, notify_go_role, reliable_send, run_relay_election, BackboneSetup, DeliveryReport,
    ReliableSession, SessionConfig, SignalTimer,
};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::netmodel::{IpPacket, NetError, Network, SendError};
use crate::topology::{DeviceId, GroupId, IfaceKind, PhysicalTopology, Role, BROADCAST_ADDRESS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum TunnelMode {
    /// Client to its GO.
    UnicastUp,
    /// GO broadcast carrying the intended client's address in the payload.
    BroadcastDown,
    /// Isolated GO to a client; only possible when the GO has no Wi-Fi address.
    UnicastDown,
    /// Client to client inside a group, one direction of a reliable pair.
    ReliableBidir,
}

impl TunnelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TunnelMode::UnicastUp => "unicast-up",
            TunnelMode::BroadcastDown => "broadcast-down",
            TunnelMode::UnicastDown => "unicast-down",
            TunnelMode::ReliableBidir => "reliable-bidir",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Endpoint {
    pub device: DeviceId,
    pub iface: IfaceKind,
}

/// A directed tunnel. Reliable pairs appear once per direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Tunnel {
    pub from: Endpoint,
    pub to: Endpoint,
    pub mode: TunnelMode,
    pub group: GroupId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RelayAssignment {
    pub group: GroupId,
    pub relay: DeviceId,
}

pub type Relays = BTreeMap<GroupId, DeviceId>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackboneError {
    #[error("group {0} has no client eligible as relay")]
    NoEligibleRelay(GroupId),
    #[error("pinned relay {relay} is not eligible in group {group}")]
    IneligibleRelay { group: GroupId, relay: DeviceId },
    #[error("{peer} did not acknowledge after {attempts} attempts")]
    PeerUnreachable { peer: DeviceId, attempts: u32 },
    #[error("{0} is not a bridge GO")]
    NotABridge(DeviceId),
    #[error("no backbone route from {from} to {to}")]
    NoRoute { from: DeviceId, to: DeviceId },
    #[error(transparent)]
    Send(#[from] SendError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Clients that may relay: P2P clients of the group. A P2P client can never
/// own another group, so the "not a GO elsewhere" condition holds by
/// construction of a validated topology.
pub fn eligible_relays(topo: &PhysicalTopology, group: GroupId) -> Vec<DeviceId> {
    topo.group(group).p2p_clients.iter().copied().filter(|&c| !topo.is_owner(c)).collect()
}

/// Uniform seeded choice among the eligible clients. Each group draws from
/// its own stream so adding a group does not perturb the others.
pub fn elect_relay(topo: &PhysicalTopology, group: GroupId, seed: u64) -> Result<RelayAssignment, BackboneError> {
    let eligible = eligible_relays(topo, group);
    if eligible.is_empty() {
        return Err(BackboneError::NoEligibleRelay(group));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(group.0));
    let relay = eligible[rng.gen_range(0..eligible.len())];
    Ok(RelayAssignment { group, relay })
}

/// Elects a relay in every group that has clients, honouring pins.
pub fn elect_relays(topo: &PhysicalTopology, seed: u64, pins: &Relays) -> Result<Relays, BackboneError> {
    let mut out = Relays::new();
    for g in topo.groups() {
        if g.client_count() == 0 {
            continue;
        }
        let relay = match pins.get(&g.id) {
            Some(&r) => {
                if !eligible_relays(topo, g.id).contains(&r) {
                    return Err(BackboneError::IneligibleRelay { group: g.id, relay: r });
                }
                r
            }
            None => elect_relay(topo, g.id, seed)?.relay,
        };
        out.insert(g.id, relay);
    }
    Ok(out)
}

/// Tunnel set of the backbone. Per group:
/// * BroadcastDown from the GO to every client that is not a bridge GO;
/// * UnicastUp from every such client to the GO;
/// * UnicastDown from a GO without a Wi-Fi address to those clients;
/// * ReliableBidir between the relay and every other client, and between
///   any two clients that are not bridge GOs.
pub fn build_tunnels(topo: &PhysicalTopology, relays: &Relays) -> Result<Vec<Tunnel>, BackboneError> {
    let mut out = Vec::new();
    for g in topo.groups() {
        if g.client_count() == 0 {
            continue;
        }
        let relay = *relays.get(&g.id).ok_or(BackboneError::NoEligibleRelay(g.id))?;
        let go = Endpoint { device: g.owner, iface: IfaceKind::P2p };
        let isolated_go = !topo.is_bridge(g.owner);
        let ep = |c: DeviceId| Endpoint { device: c, iface: g.role_of(c).expect("member").interface() };
        let plain: Vec<DeviceId> = g.clients().filter(|&c| !topo.is_owner(c)).collect();

        for &c in &plain {
            out.push(Tunnel { from: go, to: ep(c), mode: TunnelMode::BroadcastDown, group: g.id });
            out.push(Tunnel { from: ep(c), to: go, mode: TunnelMode::UnicastUp, group: g.id });
            if isolated_go {
                out.push(Tunnel { from: go, to: ep(c), mode: TunnelMode::UnicastDown, group: g.id });
            }
        }
        let clients: Vec<DeviceId> = g.clients().collect();
        for &a in &clients {
            for &b in &clients {
                if a == b {
                    continue;
                }
                let allowed = a == relay || b == relay || (!topo.is_owner(a) && !topo.is_owner(b));
                if allowed {
                    out.push(Tunnel { from: ep(a), to: ep(b), mode: TunnelMode::ReliableBidir, group: g.id });
                }
            }
        }
    }
    out.sort();
    Ok(out)
}

/// One application-layer transfer along the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Hop {
    pub from: DeviceId,
    pub to: DeviceId,
    /// The receiver's address in the shared group; for broadcast hops this
    /// is the target carried in the payload envelope.
    pub addr: Ipv4Addr,
    pub mode: TunnelMode,
    pub group: GroupId,
}

impl Hop {
    pub fn is_broadcast(&self) -> bool {
        self.mode == TunnelMode::BroadcastDown
    }
}

fn common_group(topo: &PhysicalTopology, a: DeviceId, b: DeviceId) -> Option<GroupId> {
    let gb = topo.groups_of(b);
    topo.groups_of(a).into_iter().find(|g| gb.contains(g))
}

/// The tunnel used for a direct transfer between two members of one group.
pub fn hop_between(topo: &PhysicalTopology, from: DeviceId, to: DeviceId) -> Option<Hop> {
    let group = common_group(topo, from, to)?;
    let g = topo.group(group);
    let mode = match (g.role_of(from)?, g.role_of(to)?) {
        (_, Role::GroupOwner) => TunnelMode::UnicastUp,
        (Role::GroupOwner, _) if topo.is_bridge(from) => TunnelMode::BroadcastDown,
        (Role::GroupOwner, _) => TunnelMode::UnicastDown,
        _ => TunnelMode::ReliableBidir,
    };
    let addr = topo.addr_in_group(to, group)?;
    Some(Hop { from, to, addr, mode, group })
}

/// Next backbone hop from `at` toward `dest`.
///
/// Devices are placed in their home group (the owned group for a GO). Inside
/// one home group the destination is reached directly. Toward a child group
/// the relay hands over to the child's GO on its Wi-Fi address and every
/// other member goes through the relay. Toward the parent group the GO hands
/// over to the parent's relay and every other member goes up to the GO.
pub fn next_hop(topo: &PhysicalTopology, relays: &Relays, at: DeviceId, dest: DeviceId) -> Result<Hop, BackboneError> {
    let no_route = || BackboneError::NoRoute { from: at, to: dest };
    if at == dest {
        return Err(no_route());
    }
    let here = topo.home_group(at).ok_or_else(no_route)?;
    let there = topo.home_group(dest).ok_or_else(no_route)?;
    let target = if here == there {
        dest
    } else {
        let path = topo.group_path(here, there).ok_or_else(no_route)?;
        let next = path[1];
        let relay_of = |g: GroupId| relays.get(&g).copied().ok_or(BackboneError::NoEligibleRelay(g));
        if topo.parent_group(next) == Some(here) {
            let relay = relay_of(here)?;
            if at == relay {
                topo.group(next).owner
            } else {
                relay
            }
        } else {
            let owner = topo.group(here).owner;
            if at == owner {
                relay_of(next)?
            } else {
                owner
            }
        }
    };
    hop_between(topo, at, target).ok_or_else(no_route)
}

/// Full hop sequence from `src` to `dst`.
pub fn path(topo: &PhysicalTopology, relays: &Relays, src: DeviceId, dst: DeviceId) -> Result<Vec<Hop>, BackboneError> {
    let limit = 4 * topo.groups().len() + 4;
    let mut hops = Vec::new();
    let mut at = src;
    while at != dst {
        if hops.len() >= limit {
            return Err(BackboneError::NoRoute { from: src, to: dst });
        }
        let h = next_hop(topo, relays, at, dst)?;
        at = h.to;
        hops.push(h);
    }
    Ok(hops)
}

/// Sends `payload` over one hop, wrapping broadcasts in the target envelope.
pub fn transmit_hop<U>(net: &mut Network<U>, hop: &Hop, payload: &[u8]) -> Result<u32, SendError> {
    if hop.is_broadcast() {
        let mut buf = Vec::with_capacity(4 + payload.len());
        buf.extend_from_slice(&hop.addr.octets());
        buf.extend_from_slice(payload);
        net.send_broadcast(hop.from, buf)
    } else {
        net.send_unicast(hop.from, hop.addr, payload.to_vec())
    }
}

/// Sends `payload` to every client of the GO's group.
pub fn transmit_to_group<U>(net: &mut Network<U>, go: DeviceId, payload: &[u8]) -> Result<u32, SendError> {
    let mut buf = Vec::with_capacity(4 + payload.len());
    buf.extend_from_slice(&BROADCAST_ADDRESS.octets());
    buf.extend_from_slice(payload);
    net.send_broadcast(go, buf)
}

/// The application payload of a received packet if it is meant for
/// `device`. Broadcasts are filtered on the envelope's target address; the
/// broadcast address as target selects every receiver.
pub fn open_envelope<'p>(topo: &PhysicalTopology, device: DeviceId, packet: &'p IpPacket) -> Option<&'p [u8]> {
    if !packet.broadcast {
        return Some(&packet.payload);
    }
    let target = Ipv4Addr::from(<[u8; 4]>::try_from(packet.payload.get(..4)?).ok()?);
    (target == BROADCAST_ADDRESS || topo.device(device).owns_address(target)).then(|| &packet.payload[4..])
}

/// Relays plus tunnels, for inspection and dumping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Backbone {
    pub relays: Relays,
    pub tunnels: Vec<Tunnel>,
}

#[derive(Serialize)]
struct DumpRelay<'a> {
    group: u16,
    relay: &'a str,
}

#[derive(Serialize)]
struct DumpTunnel<'a> {
    from: &'a str,
    from_iface: String,
    to: &'a str,
    to_iface: String,
    mode: &'static str,
    group: u16,
}

#[derive(Serialize)]
struct Dump<'a> {
    relays: Vec<DumpRelay<'a>>,
    tunnels: Vec<DumpTunnel<'a>>,
}

impl Backbone {
    pub fn build(topo: &PhysicalTopology, seed: u64, pins: &Relays) -> Result<Self, BackboneError> {
        let relays = elect_relays(topo, seed, pins)?;
        let tunnels = build_tunnels(topo, &relays)?;
        Ok(Backbone { relays, tunnels })
    }

    fn dump<'a>(&self, topo: &'a PhysicalTopology) -> Dump<'a> {
        Dump {
            relays: self.relays.iter().map(|(g, &r)| DumpRelay { group: g.0, relay: topo.label(r) }).collect(),
            tunnels: self
                .tunnels
                .iter()
                .map(|t| DumpTunnel {
                    from: topo.label(t.from.device),
                    from_iface: t.from.iface.to_string(),
                    to: topo.label(t.to.device),
                    to_iface: t.to.iface.to_string(),
                    mode: t.mode.as_str(),
                    group: t.group.0,
                })
                .collect(),
        }
    }

    pub fn to_json(&self, topo: &PhysicalTopology) -> String {
        serde_json::to_string_pretty(&self.dump(topo)).expect("dump serializes")
    }

    /// `kind,group,from,from_iface,to,to_iface,mode`; relay rows use `relay`
    /// as kind and leave the tunnel columns empty except `from`.
    pub fn to_csv(&self, topo: &PhysicalTopology) -> String {
        let d = self.dump(topo);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["kind", "group", "from", "from_iface", "to", "to_iface", "mode"]).expect("in-memory");
        for r in &d.relays {
            w.write_record(["relay", &r.group.to_string(), r.relay, "", "", "", ""]).expect("in-memory");
        }
        for t in &d.tunnels {
            w.write_record(["tunnel", &t.group.to_string(), t.from, &t.from_iface, t.to, &t.to_iface, t.mode])
                .expect("in-memory");
        }
        String::from_utf8(w.into_inner().expect("in-memory")).expect("UTF-8")
    }
}

/// Human-readable hop list, e.g. `Client 1A -> Client 1B [reliable-bidir]`.
pub fn describe_path(topo: &PhysicalTopology, hops: &[Hop]) -> String {
    let mut s = String::new();
    for h in hops {
        let _ = writeln!(s, "{} -> {} [{}] {}", topo.label(h.from), topo.label(h.to), h.mode.as_str(), h.addr);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configs;
    use crate::netmodel::DeliveryRules;
    use crate::topology::{random::random_tree, GO_ADDRESS};

    fn fig7() -> (PhysicalTopology, Relays) {
        let loaded = configs::fig7();
        let t = loaded.addressed(0).unwrap();
        let relays = elect_relays(&t, 0, &loaded.relay_pins).unwrap();
        (t, relays)
    }

    fn labels(t: &PhysicalTopology, hops: &[Hop]) -> Vec<String> {
        let mut v = vec![t.label(hops[0].from).to_string()];
        v.extend(hops.iter().map(|h| t.label(h.to).to_string()));
        v
    }

    #[test]
    fn eligibility_excludes_bridge_gos() {
        let (t, _) = fig7();
        let g1 = t.home_group(t.device_by_label("GO1").unwrap()).unwrap();
        let e: Vec<&str> = eligible_relays(&t, g1).iter().map(|&d| t.label(d)).collect();
        assert_eq!(e, ["Client 1A", "Client 1B"]);
    }

    #[test]
    fn single_candidate_wins_for_any_seed() {
        let (t, _) = fig7();
        let g2 = t.home_group(t.device_by_label("GO2").unwrap()).unwrap();
        for seed in 0..20 {
            assert_eq!(t.label(elect_relay(&t, g2, seed).unwrap().relay), "Client 2A");
        }
    }

    #[test]
    fn election_is_seeded_and_covers_candidates() {
        let (t, _) = fig7();
        let g1 = GroupId(1);
        let picks: std::collections::BTreeSet<_> = (0..64).map(|s| elect_relay(&t, g1, s).unwrap().relay).collect();
        assert_eq!(picks.len(), 2);
        assert_eq!(elect_relay(&t, g1, 9), elect_relay(&t, g1, 9));
    }

    #[test]
    fn no_eligible_relay_is_an_error() {
        let mut b = crate::topology::TopologyBuilder::new();
        let (go1, go2, legacy) = (b.device("GO1"), b.device("GO2"), b.device("L"));
        b.group(go1, &[], &[go2, legacy]);
        b.group(go2, &[], &[]);
        let t = crate::topology::assign_addresses(&b.build().unwrap(), 0).unwrap();
        assert_eq!(elect_relays(&t, 0, &Relays::new()), Err(BackboneError::NoEligibleRelay(GroupId(1))));
    }

    #[test]
    fn forward_example_path() {
        let (t, relays) = fig7();
        let (a, c) = (t.device_by_label("Client 1A").unwrap(), t.device_by_label("Client 3A").unwrap());
        let hops = path(&t, &relays, a, c).unwrap();
        assert_eq!(labels(&t, &hops), ["Client 1A", "Client 1B", "GO2", "Client 2A", "GO3", "Client 3A"]);
        assert_eq!(hops.iter().filter(|h| h.is_broadcast()).count(), 2);
        // Client 1B reaches GO2 on its Wi-Fi interface.
        assert_eq!(Some(hops[1].addr), t.device(hops[1].to).wifi.ip);

        let back = path(&t, &relays, c, a).unwrap();
        assert_eq!(labels(&t, &back), ["Client 3A", "GO3", "Client 2A", "GO2", "Client 1B", "Client 1A"]);
        assert_eq!(back.iter().filter(|h| h.is_broadcast()).count(), 0);
        assert_eq!(back[0].addr, GO_ADDRESS);
    }

    #[test]
    fn tunnels_respect_the_delivery_rules() {
        let (t, relays) = fig7();
        let rules = DeliveryRules::new(&t);
        for tun in build_tunnels(&t, &relays).unwrap() {
            let hop = hop_between(&t, tun.from.device, tun.to.device).unwrap();
            let v = if tun.mode == TunnelMode::BroadcastDown {
                rules.deliver_broadcast(hop.from, vec![], 0).unwrap()
            } else {
                rules.deliver_unicast(hop.from, hop.addr, vec![], 0).unwrap()
            };
            match v.outcome {
                crate::netmodel::Outcome::Delivered(r) => assert!(r.contains(&tun.to.device), "{tun:?}"),
                o => panic!("{tun:?} blocked: {o:?}"),
            }
        }
    }

    #[test]
    fn single_group_has_only_intra_group_tunnels() {
        let loaded = TopologyConfigFixture::single();
        let relays = elect_relays(&loaded, 1, &Relays::new()).unwrap();
        let tunnels = build_tunnels(&loaded, &relays).unwrap();
        assert!(tunnels.iter().all(|t| t.group == GroupId(1)));
        assert!(tunnels.iter().any(|t| t.mode == TunnelMode::UnicastDown));
        assert!(!tunnels.is_empty());
    }

    struct TopologyConfigFixture;
    impl TopologyConfigFixture {
        fn single() -> PhysicalTopology {
            let mut b = crate::topology::TopologyBuilder::new();
            let go = b.device("GO");
            let (x, y) = (b.device("X"), b.device("Y"));
            b.group(go, &[x, y], &[]);
            crate::topology::assign_addresses(&b.build().unwrap(), 0).unwrap()
        }
    }

    #[test]
    fn random_trees_are_fully_connected_with_tree_backbone() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..60 {
            let t = crate::topology::assign_addresses(&random_tree(&mut rng, 6, 20), case).unwrap();
            let relays = elect_relays(&t, case, &Relays::new()).unwrap();
            let tunnels = build_tunnels(&t, &relays).unwrap();
            let ids: Vec<DeviceId> = t.devices().iter().map(|d| d.id).collect();
            for &a in &ids {
                for &b in &ids {
                    if a == b {
                        continue;
                    }
                    let hops = path(&t, &relays, a, b).unwrap();
                    assert!(hops.len() <= 2 * t.groups().len() + 2);
                    for h in &hops {
                        assert!(
                            tunnels.iter().any(|x| x.from.device == h.from && x.to.device == h.to && x.mode == h.mode),
                            "hop {h:?} not a tunnel"
                        );
                    }
                }
            }
            // Backbone nodes: GOs and relays; edges: undirected tunnel pairs among them.
            let backbone: std::collections::BTreeSet<DeviceId> =
                t.groups().iter().map(|g| g.owner).chain(relays.values().copied()).collect();
            let edges: std::collections::BTreeSet<(DeviceId, DeviceId)> = tunnels
                .iter()
                .filter(|x| backbone.contains(&x.from.device) && backbone.contains(&x.to.device))
                .map(|x| (x.from.device.min(x.to.device), x.from.device.max(x.to.device)))
                .collect();
            assert_eq!(edges.len(), backbone.len() - 1, "backbone must be a tree");
        }
    }

    #[test]
    fn dumps() {
        let (t, relays) = fig7();
        let bb = Backbone { tunnels: build_tunnels(&t, &relays).unwrap(), relays };
        let json: serde_json::Value = serde_json::from_str(&bb.to_json(&t)).unwrap();
        assert_eq!(json["relays"].as_array().unwrap().len(), 3);
        let csv = bb.to_csv(&t);
        assert!(csv.starts_with("kind,group,from,from_iface,to,to_iface,mode\nrelay,1,Client 1B"));
    }
}
