//! Decides whether an IP transfer between two devices goes through.
//!
//! The verdict is mechanical: egress interface selection as Android does it
//! (Wi-Fi listed before P2P, own addresses captured by loopback), AP relaying
//! of client-to-client frames at the MAC layer, and the receiver-side discard
//! of packets whose source address equals one of the receiver's own.

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{
    in_subnet, DeviceId, IfaceKind, MacAddr, PhysicalTopology, BROADCAST_ADDRESS,
};

/// IPv4 + UDP header bytes added to every application payload.
pub const IP_UDP_HEADER: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Egress {
    P2p,
    Wifi,
    Loopback,
}

impl Egress {
    pub fn iface(self) -> Option<IfaceKind> {
        match self {
            Egress::P2p => Some(IfaceKind::P2p),
            Egress::Wifi => Some(IfaceKind::Wifi),
            Egress::Loopback => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IpPacket {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub broadcast: bool,
    pub payload: Vec<u8>,
    pub ip_id: u32,
}

impl IpPacket {
    pub fn size(&self) -> usize {
        self.payload.len() + IP_UDP_HEADER
    }
}

/// One MAC-layer transmission. For an AP-relayed hop the transmitter and
/// receiver change while source and destination stay put.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacFrame {
    pub ta: MacAddr,
    pub ra: MacAddr,
    pub sa: MacAddr,
    pub da: MacAddr,
    pub ip_id: u32,
    pub size: usize,
}

impl MacFrame {
    pub fn is_broadcast(&self) -> bool {
        self.ra == MacAddr::BROADCAST
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Delivered(Vec<DeviceId>),
    BlockedLoopback,
    BlockedSourceConflict(DeviceId),
    BlockedWrongEgress,
    LostOnChannel,
}

impl Outcome {
    pub fn is_delivered(&self) -> bool {
        matches!(self, Outcome::Delivered(_))
    }

    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Delivered(_) => "delivered",
            Outcome::BlockedLoopback => "blocked-loopback",
            Outcome::BlockedSourceConflict(_) => "blocked-source-conflict",
            Outcome::BlockedWrongEgress => "blocked-wrong-egress",
            Outcome::LostOnChannel => "lost-on-channel",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryVerdict {
    pub outcome: Outcome,
    /// Frames in transmission order; each paired with the transmitting device.
    pub mac_hops: Vec<(DeviceId, MacFrame)>,
    /// Receivers that got the frame but dropped it at IP (source conflict).
    pub discarded: Vec<DeviceId>,
    pub packet: IpPacket,
}

impl DeliveryVerdict {
    pub fn frames(&self) -> impl Iterator<Item = &MacFrame> {
        self.mac_hops.iter().map(|(_, f)| f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("device {0} has no addressed interface")]
    NoRoute(DeviceId),
    #[error("no device holds address {0}")]
    UnknownDestination(Ipv4Addr),
    #[error("device {0} owns no group and cannot broadcast")]
    NotGroupOwner(DeviceId),
}

/// The rule engine bound to one addressed topology.
#[derive(Debug, Clone, Copy)]
pub struct DeliveryRules<'a> {
    topo: &'a PhysicalTopology,
}

impl<'a> DeliveryRules<'a> {
    pub fn new(topo: &'a PhysicalTopology) -> Self {
        DeliveryRules { topo }
    }

    pub fn topology(&self) -> &'a PhysicalTopology {
        self.topo
    }

    pub fn select_egress(&self, device: DeviceId, dst_ip: Ipv4Addr, broadcast: bool) -> Result<Egress, NetError> {
        let dev = self.topo.device(device);
        let p2p = dev.p2p.ip.is_some();
        let wifi = dev.wifi.ip.is_some();
        if !p2p && !wifi {
            return Err(NetError::NoRoute(device));
        }
        if dev.owns_address(dst_ip) {
            return Ok(Egress::Loopback);
        }
        if broadcast {
            return Ok(if p2p { Egress::P2p } else { Egress::Wifi });
        }
        // Both interfaces sit on 192.168.49.0/24; the Wi-Fi route is listed first.
        if p2p && wifi && in_subnet(dst_ip) {
            return Ok(Egress::Wifi);
        }
        Ok(if wifi { Egress::Wifi } else { Egress::P2p })
    }

    pub fn deliver_unicast(
        &self,
        sender: DeviceId,
        dst_ip: Ipv4Addr,
        payload: Vec<u8>,
        ip_id: u32,
    ) -> Result<DeliveryVerdict, NetError> {
        if !self.topo.is_assigned(dst_ip) {
            return Err(NetError::UnknownDestination(dst_ip));
        }
        let egress = self.select_egress(sender, dst_ip, false)?;
        let dev = self.topo.device(sender);
        let Some(kind) = egress.iface() else {
            let src_ip = dev.addresses().find(|&a| a == dst_ip).unwrap_or(dst_ip);
            let packet = IpPacket { src_ip, dst_ip, broadcast: false, payload, ip_id };
            return Ok(blocked(Outcome::BlockedLoopback, packet, Vec::new()));
        };
        let iface = dev.iface(kind);
        let src_ip = iface.ip.expect("egress interface is addressed");
        let packet = IpPacket { src_ip, dst_ip, broadcast: false, payload, ip_id };
        let size = packet.size();

        let group_id = self.topo.group_of_iface(sender, kind).expect("addressed interface is associated");
        let Some(receiver) = self.topo.member_with_ip(group_id, dst_ip) else {
            return Ok(blocked(Outcome::BlockedWrongEgress, packet, Vec::new()));
        };
        let group = self.topo.group(group_id);
        let rx_kind = group.role_of(receiver).expect("member").interface();
        let ra = self.topo.device(receiver).iface(rx_kind).mac;
        let sa = iface.mac;

        let mac_hops = if sender == group.owner || receiver == group.owner {
            vec![(sender, MacFrame { ta: sa, ra, sa, da: ra, ip_id, size })]
        } else {
            let ap = self.topo.device(group.owner).p2p.mac;
            vec![
                (sender, MacFrame { ta: sa, ra: ap, sa, da: ra, ip_id, size }),
                (group.owner, MacFrame { ta: ap, ra, sa, da: ra, ip_id, size }),
            ]
        };

        if self.topo.device(receiver).owns_address(src_ip) {
            return Ok(blocked(Outcome::BlockedSourceConflict(receiver), packet, mac_hops));
        }
        Ok(DeliveryVerdict { outcome: Outcome::Delivered(vec![receiver]), mac_hops, discarded: Vec::new(), packet })
    }

    /// A group owner's broadcast reaches every client of its group in one
    /// frame. Clients that are group owners elsewhere hold the same source
    /// address and drop it.
    pub fn deliver_broadcast(&self, go: DeviceId, payload: Vec<u8>, ip_id: u32) -> Result<DeliveryVerdict, NetError> {
        let group_id = self.topo.owned_group(go).ok_or(NetError::NotGroupOwner(go))?;
        let dev = self.topo.device(go);
        let src_ip = dev.p2p.ip.ok_or(NetError::NoRoute(go))?;
        let packet = IpPacket { src_ip, dst_ip: BROADCAST_ADDRESS, broadcast: true, payload, ip_id };
        let frame = MacFrame {
            ta: dev.p2p.mac,
            ra: MacAddr::BROADCAST,
            sa: dev.p2p.mac,
            da: MacAddr::BROADCAST,
            ip_id,
            size: packet.size(),
        };
        let (discarded, delivered): (Vec<DeviceId>, Vec<DeviceId>) = self
            .topo
            .group(group_id)
            .clients()
            .partition(|&c| self.topo.device(c).owns_address(src_ip));
        Ok(DeliveryVerdict { outcome: Outcome::Delivered(delivered), mac_hops: vec![(go, frame)], discarded, packet })
    }
}

fn blocked(outcome: Outcome, packet: IpPacket, mac_hops: Vec<(DeviceId, MacFrame)>) -> DeliveryVerdict {
    DeliveryVerdict { outcome, mac_hops, discarded: Vec::new(), packet }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configs;

    fn fig7() -> (PhysicalTopology, impl Fn(&str) -> DeviceId) {
        let t = configs::fig7().addressed(0).unwrap();
        let t2 = t.clone();
        (t, move |l: &str| t2.device_by_label(l).unwrap())
    }

    fn ip(t: &PhysicalTopology, d: DeviceId, k: IfaceKind) -> Ipv4Addr {
        t.device(d).iface(k).ip.unwrap()
    }

    #[test]
    fn egress_selection_on_a_bridge() {
        let (t, id) = fig7();
        let rules = DeliveryRules::new(&t);
        let go2 = id("GO2");
        let c2a = ip(&t, id("Client 2A"), IfaceKind::P2p);
        assert_eq!(rules.select_egress(go2, c2a, false), Ok(Egress::Wifi));
        assert_eq!(rules.select_egress(go2, BROADCAST_ADDRESS, true), Ok(Egress::P2p));
        assert_eq!(rules.select_egress(go2, crate::topology::GO_ADDRESS, false), Ok(Egress::Loopback));
        // Client: only one interface.
        assert_eq!(rules.select_egress(id("Client 2A"), crate::topology::GO_ADDRESS, false), Ok(Egress::P2p));
    }

    #[test]
    fn client_to_own_go_is_one_hop() {
        let (t, id) = fig7();
        let v = DeliveryRules::new(&t)
            .deliver_unicast(id("Client 1A"), crate::topology::GO_ADDRESS, vec![], 1)
            .unwrap();
        assert_eq!(v.outcome, Outcome::Delivered(vec![id("GO1")]));
        assert_eq!(v.mac_hops.len(), 1);
    }

    #[test]
    fn client_to_client_is_relayed_by_the_ap() {
        let (t, id) = fig7();
        let dst = ip(&t, id("Client 1B"), IfaceKind::P2p);
        let v = DeliveryRules::new(&t).deliver_unicast(id("Client 1A"), dst, vec![0; 10], 7).unwrap();
        assert_eq!(v.outcome, Outcome::Delivered(vec![id("Client 1B")]));
        assert_eq!(v.mac_hops.len(), 2);
        let go1_mac = t.device(id("GO1")).p2p.mac;
        let (h1, h2) = (v.mac_hops[0].1, v.mac_hops[1].1);
        assert_eq!(h1.ra, go1_mac);
        assert_eq!(h2.ta, go1_mac);
        assert_eq!((h1.sa, h1.da), (h2.sa, h2.da));
        assert_eq!(v.mac_hops[1].0, id("GO1"));
        assert_eq!(h1.size, 38);
    }

    #[test]
    fn go_to_neighbouring_go_hits_source_conflict() {
        let (t, id) = fig7();
        let dst = ip(&t, id("GO2"), IfaceKind::Wifi);
        let v = DeliveryRules::new(&t).deliver_unicast(id("GO1"), dst, vec![], 1).unwrap();
        assert_eq!(v.outcome, Outcome::BlockedSourceConflict(id("GO2")));
    }

    #[test]
    fn bridge_go_to_own_client_takes_the_wrong_egress() {
        let (t, id) = fig7();
        let dst = ip(&t, id("Client 2A"), IfaceKind::P2p);
        let v = DeliveryRules::new(&t).deliver_unicast(id("GO2"), dst, vec![], 1).unwrap();
        assert_eq!(v.outcome, Outcome::BlockedWrongEgress);
        assert!(v.mac_hops.is_empty());
    }

    #[test]
    fn isolated_go_reaches_own_client() {
        let (t, id) = fig7();
        let dst = ip(&t, id("Client 1A"), IfaceKind::P2p);
        let v = DeliveryRules::new(&t).deliver_unicast(id("GO1"), dst, vec![], 1).unwrap();
        assert_eq!(v.outcome, Outcome::Delivered(vec![id("Client 1A")]));
        assert_eq!(v.mac_hops.len(), 1);
    }

    #[test]
    fn broadcast_stays_in_group_and_bridges_discard() {
        let (t, id) = fig7();
        let rules = DeliveryRules::new(&t);
        let v = rules.deliver_broadcast(id("GO2"), vec![], 1).unwrap();
        assert_eq!(v.outcome, Outcome::Delivered(vec![id("Client 2A")]));
        assert_eq!(v.discarded, vec![id("GO3")]);
        let v = rules.deliver_broadcast(id("GO1"), vec![], 2).unwrap();
        assert_eq!(v.outcome, Outcome::Delivered(vec![id("Client 1A"), id("Client 1B")]));
        assert_eq!(v.discarded, vec![id("GO2")]);
        assert!(v.mac_hops[0].1.is_broadcast());
    }

    #[test]
    fn empty_group_broadcast_reaches_nobody() {
        let mut b = crate::topology::TopologyBuilder::new();
        let go = b.device("GO");
        b.group(go, &[], &[]);
        let t = crate::topology::assign_addresses(&b.build().unwrap(), 0).unwrap();
        let v = DeliveryRules::new(&t).deliver_broadcast(go, vec![], 1).unwrap();
        assert_eq!(v.outcome, Outcome::Delivered(vec![]));
    }

    #[test]
    fn errors() {
        let (t, id) = fig7();
        let rules = DeliveryRules::new(&t);
        assert_eq!(
            rules.deliver_unicast(id("GO1"), Ipv4Addr::new(192, 168, 49, 255), vec![], 1).unwrap_err(),
            NetError::UnknownDestination(Ipv4Addr::new(192, 168, 49, 255))
        );
        assert_eq!(rules.deliver_broadcast(id("Client 1A"), vec![], 1).unwrap_err(), NetError::NotGroupOwner(id("Client 1A")));
    }
}
