//! Physical multi-group topology: devices, their two radio interfaces, group
//! memberships, role validation and address assignment.
//!
//! Every device carries a P2P interface (used as group owner or P2P client)
//! and a Wi-Fi interface (used only when the device joins a group as a
//! legacy client). A group owner that is also a legacy client of another
//! group is a *bridge*; bridges link groups into a tree.

mod config;
pub mod random;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::net::Ipv4Addr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ConfigError, LoadedTopology, TopologyConfig};

/// The /24 every Wi-Fi Direct group owner hands out.
pub const SUBNET_BASE: [u8; 3] = [192, 168, 49];
/// The address every group owner gives its own P2P interface.
pub const GO_ADDRESS: Ipv4Addr = Ipv4Addr::new(192, 168, 49, 1);
pub const BROADCAST_ADDRESS: Ipv4Addr = Ipv4Addr::new(192, 168, 49, 255);
/// Host part range handed out to clients.
pub const CLIENT_HOST_MIN: u8 = 2;
pub const CLIENT_HOST_MAX: u8 = 254;

pub fn in_subnet(ip: Ipv4Addr) -> bool {
    ip.octets()[..3] == SUBNET_BASE
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DeviceId(pub u16);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupId(pub u16);

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "D{}", self.0)
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "G{}", self.0)
    }
}

/// A 48-bit MAC identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    pub const BROADCAST: MacAddr = MacAddr([0xff; 6]);

    /// Locally administered address derived from the device id; the second
    /// octet tells the two MAC entities of a device apart.
    pub fn derive(device: DeviceId, kind: IfaceKind) -> Self {
        let tag = match kind {
            IfaceKind::P2p => 0x50,
            IfaceKind::Wifi => 0x57,
        };
        let [hi, lo] = device.0.to_be_bytes();
        MacAddr([0x02, tag, 0x00, 0x00, hi, lo])
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IfaceKind {
    P2p,
    Wifi,
}

impl fmt::Display for IfaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IfaceKind::P2p => f.write_str("p2p"),
            IfaceKind::Wifi => f.write_str("wifi"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interface {
    pub kind: IfaceKind,
    pub mac: MacAddr,
    pub ip: Option<Ipv4Addr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Device {
    pub id: DeviceId,
    pub label: String,
    pub p2p: Interface,
    pub wifi: Interface,
}

impl Device {
    pub fn new(id: DeviceId, label: impl Into<String>) -> Self {
        Device {
            id,
            label: label.into(),
            p2p: Interface { kind: IfaceKind::P2p, mac: MacAddr::derive(id, IfaceKind::P2p), ip: None },
            wifi: Interface { kind: IfaceKind::Wifi, mac: MacAddr::derive(id, IfaceKind::Wifi), ip: None },
        }
    }

    pub fn iface(&self, kind: IfaceKind) -> &Interface {
        match kind {
            IfaceKind::P2p => &self.p2p,
            IfaceKind::Wifi => &self.wifi,
        }
    }

    fn iface_mut(&mut self, kind: IfaceKind) -> &mut Interface {
        match kind {
            IfaceKind::P2p => &mut self.p2p,
            IfaceKind::Wifi => &mut self.wifi,
        }
    }

    /// Addresses configured on this device, P2P first.
    pub fn addresses(&self) -> impl Iterator<Item = Ipv4Addr> + '_ {
        self.p2p.ip.into_iter().chain(self.wifi.ip)
    }

    pub fn owns_address(&self, ip: Ipv4Addr) -> bool {
        self.p2p.ip == Some(ip) || self.wifi.ip == Some(ip)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    GroupOwner,
    P2pClient,
    LegacyClient,
}

impl Role {
    /// Interface a device uses for a group in which it plays this role.
    pub fn interface(self) -> IfaceKind {
        match self {
            Role::GroupOwner | Role::P2pClient => IfaceKind::P2p,
            Role::LegacyClient => IfaceKind::Wifi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub id: GroupId,
    pub owner: DeviceId,
    pub p2p_clients: BTreeSet<DeviceId>,
    pub legacy_clients: BTreeSet<DeviceId>,
}

impl Group {
    pub fn clients(&self) -> impl Iterator<Item = DeviceId> + '_ {
        self.p2p_clients.iter().chain(self.legacy_clients.iter()).copied()
    }

    pub fn client_count(&self) -> usize {
        self.p2p_clients.len() + self.legacy_clients.len()
    }

    pub fn role_of(&self, device: DeviceId) -> Option<Role> {
        if self.owner == device {
            Some(Role::GroupOwner)
        } else if self.p2p_clients.contains(&device) {
            Some(Role::P2pClient)
        } else if self.legacy_clients.contains(&device) {
            Some(Role::LegacyClient)
        } else {
            None
        }
    }
}

/// The three role combinations Android refuses to set up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RoleRule {
    /// P2P client in one group and group owner in another.
    P2pClientAndOwner,
    /// Group owner of two or more groups.
    MultipleOwner,
    /// Client (P2P or legacy) of two or more groups.
    MultipleClient,
}

impl RoleRule {
    pub fn id(self) -> char {
        match self {
            RoleRule::P2pClientAndOwner => 'a',
            RoleRule::MultipleOwner => 'b',
            RoleRule::MultipleClient => 'c',
        }
    }
}

impl fmt::Display for RoleRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self {
            RoleRule::P2pClientAndOwner => "P2P client in one group and group owner in another",
            RoleRule::MultipleOwner => "group owner of two or more groups",
            RoleRule::MultipleClient => "client in two or more groups",
        };
        write!(f, "rule ({}): {}", self.id(), what)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("duplicate device id {0}")]
    DuplicateDevice(DeviceId),
    #[error("duplicate device label {0:?}")]
    DuplicateLabel(String),
    #[error("duplicate group id {0}")]
    DuplicateGroup(GroupId),
    #[error("group {group} references unknown device {device}")]
    UnknownDevice { group: GroupId, device: DeviceId },
    #[error("owner of group {0} is also listed as one of its clients")]
    OwnerIsClient(GroupId),
    #[error("device {device} is both P2P and legacy client of group {group}")]
    OverlappingClientSets { group: GroupId, device: DeviceId },
    #[error("forbidden role combination for {label} ({device}): {rule}")]
    ForbiddenRoleCombination { device: DeviceId, label: String, rule: RoleRule },
    #[error("group adjacency contains a cycle through {0:?}")]
    GroupCycle(Vec<GroupId>),
    #[error("group {group} needs {clients} client addresses, only 253 exist")]
    GroupTooLarge { group: GroupId, clients: usize },
    #[error("client address pool exhausted")]
    AddressPoolExhausted,
    #[error("address {ip} configured on {device} ({iface}) is not valid there")]
    InvalidAddress { device: DeviceId, iface: IfaceKind, ip: Ipv4Addr },
    #[error("address {0} configured twice")]
    DuplicateAddress(Ipv4Addr),
}

/// Directed group-tree edge: `bridge` owns `child` and is a legacy client of `parent`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeLink {
    pub child: GroupId,
    pub parent: GroupId,
    pub bridge: DeviceId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhysicalTopology {
    devices: Vec<Device>,
    groups: Vec<Group>,
}

impl PhysicalTopology {
    /// Builds a topology after structural checks (unique ids and labels,
    /// known members, disjoint client sets). Role constraints are checked
    /// separately by [`validate_roles`].
    pub fn new(mut devices: Vec<Device>, mut groups: Vec<Group>) -> Result<Self, TopologyError> {
        devices.sort_by_key(|d| d.id);
        groups.sort_by_key(|g| g.id);
        let mut labels = HashSet::new();
        for pair in devices.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(TopologyError::DuplicateDevice(pair[0].id));
            }
        }
        for d in &devices {
            if !labels.insert(d.label.as_str()) {
                return Err(TopologyError::DuplicateLabel(d.label.clone()));
            }
        }
        for pair in groups.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(TopologyError::DuplicateGroup(pair[0].id));
            }
        }
        let known: BTreeSet<DeviceId> = devices.iter().map(|d| d.id).collect();
        for g in &groups {
            for member in std::iter::once(g.owner).chain(g.clients()) {
                if !known.contains(&member) {
                    return Err(TopologyError::UnknownDevice { group: g.id, device: member });
                }
            }
            if g.p2p_clients.contains(&g.owner) || g.legacy_clients.contains(&g.owner) {
                return Err(TopologyError::OwnerIsClient(g.id));
            }
            if let Some(&d) = g.p2p_clients.intersection(&g.legacy_clients).next() {
                return Err(TopologyError::OverlappingClientSets { group: g.id, device: d });
            }
        }
        Ok(PhysicalTopology { devices, groups })
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn device(&self, id: DeviceId) -> &Device {
        let idx = self
            .devices
            .binary_search_by_key(&id, |d| d.id)
            .unwrap_or_else(|_| panic!("unknown device {id}"));
        &self.devices[idx]
    }

    pub fn try_device(&self, id: DeviceId) -> Option<&Device> {
        self.devices.binary_search_by_key(&id, |d| d.id).ok().map(|i| &self.devices[i])
    }

    pub fn group(&self, id: GroupId) -> &Group {
        let idx = self
            .groups
            .binary_search_by_key(&id, |g| g.id)
            .unwrap_or_else(|_| panic!("unknown group {id}"));
        &self.groups[idx]
    }

    pub fn device_by_label(&self, label: &str) -> Option<DeviceId> {
        self.devices.iter().find(|d| d.label == label).map(|d| d.id)
    }

    pub fn label(&self, id: DeviceId) -> &str {
        &self.device(id).label
    }

    /// Group this device owns, if any.
    pub fn owned_group(&self, device: DeviceId) -> Option<GroupId> {
        self.groups.iter().find(|g| g.owner == device).map(|g| g.id)
    }

    /// Group this device is a client of, with its role there.
    pub fn client_group(&self, device: DeviceId) -> Option<(GroupId, Role)> {
        self.groups.iter().find_map(|g| match g.role_of(device) {
            Some(r @ (Role::P2pClient | Role::LegacyClient)) => Some((g.id, r)),
            _ => None,
        })
    }

    /// The group a device primarily belongs to: the one it owns, otherwise
    /// the one it is a client of.
    pub fn home_group(&self, device: DeviceId) -> Option<GroupId> {
        self.owned_group(device).or_else(|| self.client_group(device).map(|(g, _)| g))
    }

    pub fn role_in(&self, device: DeviceId, group: GroupId) -> Option<Role> {
        self.group(group).role_of(device)
    }

    pub fn is_owner(&self, device: DeviceId) -> bool {
        self.owned_group(device).is_some()
    }

    /// A group owner that is also a legacy client elsewhere.
    pub fn is_bridge(&self, device: DeviceId) -> bool {
        self.is_owner(device) && matches!(self.client_group(device), Some((_, Role::LegacyClient)))
    }

    /// The group whose legacy client set contains the owner of `group`.
    pub fn parent_group(&self, group: GroupId) -> Option<GroupId> {
        let owner = self.group(group).owner;
        match self.client_group(owner) {
            Some((parent, Role::LegacyClient)) => Some(parent),
            _ => None,
        }
    }

    pub fn child_groups(&self, group: GroupId) -> Vec<GroupId> {
        self.group(group)
            .legacy_clients
            .iter()
            .filter_map(|&c| self.owned_group(c))
            .collect()
    }

    /// Owner first, then P2P clients, then legacy clients.
    pub fn members(&self, group: GroupId) -> Vec<DeviceId> {
        let g = self.group(group);
        std::iter::once(g.owner).chain(g.clients()).collect()
    }

    /// Groups this device's interfaces are associated with.
    pub fn groups_of(&self, device: DeviceId) -> Vec<GroupId> {
        self.groups.iter().filter(|g| g.role_of(device).is_some()).map(|g| g.id).collect()
    }

    /// Group reached through the given interface of a device.
    pub fn group_of_iface(&self, device: DeviceId, kind: IfaceKind) -> Option<GroupId> {
        self.groups
            .iter()
            .find(|g| g.role_of(device).map(Role::interface) == Some(kind))
            .map(|g| g.id)
    }

    /// Address a device uses inside a group it belongs to.
    pub fn addr_in_group(&self, device: DeviceId, group: GroupId) -> Option<Ipv4Addr> {
        let role = self.role_in(device, group)?;
        self.device(device).iface(role.interface()).ip
    }

    pub fn member_with_ip(&self, group: GroupId, ip: Ipv4Addr) -> Option<DeviceId> {
        self.members(group)
            .into_iter()
            .find(|&m| self.addr_in_group(m, group) == Some(ip))
    }

    pub fn is_assigned(&self, ip: Ipv4Addr) -> bool {
        self.devices.iter().any(|d| d.owns_address(ip))
    }

    /// Devices whose interfaces carry this address (several for 192.168.49.1).
    pub fn holders_of(&self, ip: Ipv4Addr) -> Vec<DeviceId> {
        self.devices.iter().filter(|d| d.owns_address(ip)).map(|d| d.id).collect()
    }

    /// One entry per group owner that is a legacy client elsewhere, ordered by child group.
    pub fn bridge_links(&self) -> Vec<BridgeLink> {
        self.groups
            .iter()
            .filter_map(|g| {
                self.parent_group(g.id).map(|parent| BridgeLink { child: g.id, parent, bridge: g.owner })
            })
            .collect()
    }

    /// Group-tree path from `from` to `to`, both ends included.
    pub fn group_path(&self, from: GroupId, to: GroupId) -> Option<Vec<GroupId>> {
        let up_from = self.ancestry(from);
        let up_to = self.ancestry(to);
        let common = up_from.iter().find(|g| up_to.contains(g))?;
        let mut path: Vec<GroupId> = up_from.iter().take_while(|g| *g != common).copied().collect();
        path.push(*common);
        let mut down: Vec<GroupId> = up_to.iter().take_while(|g| *g != common).copied().collect();
        down.reverse();
        path.extend(down);
        Some(path)
    }

    /// `group` followed by its ancestors up to the root.
    pub fn ancestry(&self, group: GroupId) -> Vec<GroupId> {
        let mut chain = vec![group];
        let mut cur = group;
        while let Some(p) = self.parent_group(cur) {
            if chain.contains(&p) {
                break;
            }
            chain.push(p);
            cur = p;
        }
        chain
    }

    /// Number of interfaces carrying an address.
    pub fn addressed_interface_count(&self, device: DeviceId) -> usize {
        self.device(device).addresses().count()
    }

    pub(crate) fn device_mut(&mut self, id: DeviceId) -> &mut Device {
        let idx = self.devices.binary_search_by_key(&id, |d| d.id).expect("known device");
        &mut self.devices[idx]
    }
}

/// Checks the Android role constraints and that bridges link groups into a forest.
///
/// Devices are visited in id order and rules (a), (b), (c) in that order, so
/// the first violation reported is deterministic.
pub fn validate_roles(topology: &PhysicalTopology) -> Result<(), TopologyError> {
    for d in topology.devices() {
        let mut owner_of = 0usize;
        let mut p2p_of = 0usize;
        let mut legacy_of = 0usize;
        for g in topology.groups() {
            match g.role_of(d.id) {
                Some(Role::GroupOwner) => owner_of += 1,
                Some(Role::P2pClient) => p2p_of += 1,
                Some(Role::LegacyClient) => legacy_of += 1,
                None => {}
            }
        }
        let rule = if p2p_of >= 1 && owner_of >= 1 {
            Some(RoleRule::P2pClientAndOwner)
        } else if owner_of >= 2 {
            Some(RoleRule::MultipleOwner)
        } else if p2p_of + legacy_of >= 2 {
            Some(RoleRule::MultipleClient)
        } else {
            None
        };
        if let Some(rule) = rule {
            return Err(TopologyError::ForbiddenRoleCombination { device: d.id, label: d.label.clone(), rule });
        }
    }

    // With the role rules in place every group has at most one parent, so a
    // cycle shows up as a parent chain that revisits a group.
    for g in topology.groups() {
        let mut seen = vec![g.id];
        let mut cur = g.id;
        while let Some(p) = topology.parent_group(cur) {
            if seen.contains(&p) {
                let start = seen.iter().position(|x| *x == p).unwrap_or(0);
                return Err(TopologyError::GroupCycle(seen[start..].to_vec()));
            }
            seen.push(p);
            cur = p;
        }
    }
    Ok(())
}

/// Gives every group owner 192.168.49.1 on its P2P interface and every
/// client interface a host number drawn from [2, 254].
///
/// Host numbers are drawn globally without replacement, so client addresses
/// never collide across groups. Addresses already present on client
/// interfaces are kept. The result depends only on `(topology, seed)`.
pub fn assign_addresses(topology: &PhysicalTopology, seed: u64) -> Result<PhysicalTopology, TopologyError> {
    validate_roles(topology)?;
    let mut out = topology.clone();

    for g in out.groups.clone() {
        if g.client_count() > usize::from(CLIENT_HOST_MAX - CLIENT_HOST_MIN + 1) {
            return Err(TopologyError::GroupTooLarge { group: g.id, clients: g.client_count() });
        }
    }

    // Explicit addresses: validate placement and reserve host numbers.
    let mut reserved = BTreeSet::new();
    let assoc: BTreeMap<(DeviceId, IfaceKind), Role> = out
        .groups
        .iter()
        .flat_map(|g| {
            std::iter::once(g.owner)
                .chain(g.clients())
                .map(move |d| (d, g.role_of(d).expect("member")))
                .collect::<Vec<_>>()
        })
        .map(|(d, r)| ((d, r.interface()), r))
        .collect();
    for d in &out.devices {
        for iface in [&d.p2p, &d.wifi] {
            let Some(ip) = iface.ip else { continue };
            let role = assoc.get(&(d.id, iface.kind));
            let ok = match role {
                None => false,
                Some(Role::GroupOwner) => ip == GO_ADDRESS,
                Some(_) => in_subnet(ip) && (CLIENT_HOST_MIN..=CLIENT_HOST_MAX).contains(&ip.octets()[3]),
            };
            if !ok {
                return Err(TopologyError::InvalidAddress { device: d.id, iface: iface.kind, ip });
            }
            if role != Some(&Role::GroupOwner) && !reserved.insert(ip.octets()[3]) {
                return Err(TopologyError::DuplicateAddress(ip));
            }
        }
    }

    let mut pool: Vec<u8> = (CLIENT_HOST_MIN..=CLIENT_HOST_MAX).filter(|h| !reserved.contains(h)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);

    let groups = out.groups.clone();
    for g in &groups {
        out.device_mut(g.owner).p2p.ip = Some(GO_ADDRESS);
        for (client, kind) in g
            .p2p_clients
            .iter()
            .map(|&c| (c, IfaceKind::P2p))
            .chain(g.legacy_clients.iter().map(|&c| (c, IfaceKind::Wifi)))
        {
            let iface = out.device_mut(client).iface_mut(kind);
            if iface.ip.is_none() {
                let host = pool.pop().ok_or(TopologyError::AddressPoolExhausted)?;
                let [a, b, c] = SUBNET_BASE;
                iface.ip = Some(Ipv4Addr::new(a, b, c, host));
            }
        }
    }
    Ok(out)
}

/// Convenience builder used by the bundled topologies and tests.
#[derive(Debug, Default, Clone)]
pub struct TopologyBuilder {
    devices: Vec<Device>,
    groups: Vec<Group>,
}

impl TopologyBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn device(&mut self, label: &str) -> DeviceId {
        let id = DeviceId(self.devices.len() as u16);
        self.devices.push(Device::new(id, label));
        id
    }

    pub fn group(&mut self, owner: DeviceId, p2p: &[DeviceId], legacy: &[DeviceId]) -> GroupId {
        let id = GroupId(self.groups.len() as u16 + 1);
        self.groups.push(Group {
            id,
            owner,
            p2p_clients: p2p.iter().copied().collect(),
            legacy_clients: legacy.iter().copied().collect(),
        });
        id
    }

    /// Pins a client interface address.
    pub fn address(&mut self, device: DeviceId, kind: IfaceKind, ip: Ipv4Addr) -> &mut Self {
        self.devices[usize::from(device.0)].iface_mut(kind).ip = Some(ip);
        self
    }

    pub fn build(self) -> Result<PhysicalTopology, TopologyError> {
        PhysicalTopology::new(self.devices, self.groups)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig4() -> (PhysicalTopology, [DeviceId; 6]) {
        let mut b = TopologyBuilder::new();
        let go1 = b.device("GO1");
        let go2 = b.device("GO2");
        let go3 = b.device("GO3");
        let c1 = b.device("Client 1");
        let c2 = b.device("Client 2");
        let c3 = b.device("Client 3");
        b.group(go1, &[c1], &[go2]);
        b.group(go2, &[c2], &[go3]);
        b.group(go3, &[c3], &[]);
        (b.build().unwrap(), [go1, go2, go3, c1, c2, c3])
    }

    #[test]
    fn bridge_owner_is_accepted() {
        let (t, _) = fig4();
        assert_eq!(validate_roles(&t), Ok(()));
    }

    #[test]
    fn owner_of_two_groups_violates_rule_b() {
        let mut b = TopologyBuilder::new();
        let x = b.device("X");
        let c1 = b.device("C1");
        let c2 = b.device("C2");
        b.group(x, &[c1], &[]);
        b.group(x, &[c2], &[]);
        let t = b.build().unwrap();
        match validate_roles(&t) {
            Err(TopologyError::ForbiddenRoleCombination { device, rule, .. }) => {
                assert_eq!(device, x);
                assert_eq!(rule, RoleRule::MultipleOwner);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn p2p_client_and_owner_violates_rule_a() {
        let mut b = TopologyBuilder::new();
        let go1 = b.device("GO1");
        let x = b.device("X");
        let c = b.device("C");
        b.group(go1, &[x], &[]);
        b.group(x, &[c], &[]);
        let t = b.build().unwrap();
        assert!(matches!(
            validate_roles(&t),
            Err(TopologyError::ForbiddenRoleCombination { rule: RoleRule::P2pClientAndOwner, .. })
        ));
    }

    #[test]
    fn client_of_two_groups_violates_rule_c() {
        let mut b = TopologyBuilder::new();
        let go1 = b.device("GO1");
        let go2 = b.device("GO2");
        let x = b.device("X");
        b.group(go1, &[x], &[]);
        b.group(go2, &[], &[x]);
        let t = b.build().unwrap();
        assert!(matches!(
            validate_roles(&t),
            Err(TopologyError::ForbiddenRoleCombination { rule: RoleRule::MultipleClient, .. })
        ));
    }

    #[test]
    fn single_group_is_valid() {
        let mut b = TopologyBuilder::new();
        let go = b.device("GO");
        let c = b.device("C");
        b.group(go, &[c], &[]);
        let t = b.build().unwrap();
        assert_eq!(validate_roles(&t), Ok(()));
        assert!(t.bridge_links().is_empty());
    }

    #[test]
    fn cyclic_bridges_are_rejected() {
        let mut b = TopologyBuilder::new();
        let go1 = b.device("GO1");
        let go2 = b.device("GO2");
        b.group(go1, &[], &[go2]);
        b.group(go2, &[], &[go1]);
        let t = b.build().unwrap();
        assert!(matches!(validate_roles(&t), Err(TopologyError::GroupCycle(_))));
    }

    #[test]
    fn structural_errors() {
        let mut b = TopologyBuilder::new();
        let go = b.device("GO");
        b.group(go, &[go], &[]);
        assert_eq!(b.build(), Err(TopologyError::OwnerIsClient(GroupId(1))));

        let mut b = TopologyBuilder::new();
        let go = b.device("GO");
        let c = b.device("C");
        b.group(go, &[c], &[c]);
        assert!(matches!(b.build(), Err(TopologyError::OverlappingClientSets { .. })));

        let mut b = TopologyBuilder::new();
        b.device("A");
        b.device("A");
        assert!(matches!(b.build(), Err(TopologyError::DuplicateLabel(_))));

        let mut b = TopologyBuilder::new();
        let go = b.device("GO");
        b.group(go, &[DeviceId(9)], &[]);
        assert!(matches!(b.build(), Err(TopologyError::UnknownDevice { .. })));
    }

    #[test]
    fn bridge_links_of_fig4() {
        let (t, [_, go2, go3, ..]) = fig4();
        let links = t.bridge_links();
        assert_eq!(
            links,
            vec![
                BridgeLink { child: GroupId(2), parent: GroupId(1), bridge: go2 },
                BridgeLink { child: GroupId(3), parent: GroupId(2), bridge: go3 },
            ]
        );
    }

    #[test]
    fn addresses_follow_the_android_plan() {
        let (t, [go1, go2, go3, c1, c2, c3]) = fig4();
        let a = assign_addresses(&t, 11).unwrap();
        for go in [go1, go2, go3] {
            assert_eq!(a.device(go).p2p.ip, Some(GO_ADDRESS));
        }
        // Isolated owner: no Wi-Fi address.
        assert_eq!(a.device(go1).wifi.ip, None);
        assert!(a.device(go2).wifi.ip.is_some());
        assert!(a.device(go3).wifi.ip.is_some());
        for c in [c1, c2, c3] {
            let ip = a.device(c).p2p.ip.unwrap();
            assert!(in_subnet(ip));
            assert!((2..=254).contains(&ip.octets()[3]));
            assert_eq!(a.device(c).wifi.ip, None);
        }
        let dual = a.devices().iter().filter(|d| d.addresses().count() == 2).count();
        assert_eq!(dual, a.bridge_links().len());
    }

    #[test]
    fn assignment_is_deterministic_per_seed() {
        let (t, _) = fig4();
        assert_eq!(assign_addresses(&t, 5).unwrap(), assign_addresses(&t, 5).unwrap());
    }

    #[test]
    fn explicit_addresses_are_kept_and_validated() {
        let mut b = TopologyBuilder::new();
        let go1 = b.device("GO1");
        let go2 = b.device("GO2");
        b.group(go1, &[], &[go2]);
        b.group(go2, &[], &[]);
        b.address(go2, IfaceKind::Wifi, Ipv4Addr::new(192, 168, 49, 134));
        let a = assign_addresses(&b.build().unwrap(), 1).unwrap();
        assert_eq!(a.device(go2).wifi.ip, Some(Ipv4Addr::new(192, 168, 49, 134)));

        let mut b = TopologyBuilder::new();
        let go1 = b.device("GO1");
        let c = b.device("C");
        b.group(go1, &[c], &[]);
        b.address(c, IfaceKind::Wifi, Ipv4Addr::new(192, 168, 49, 9));
        assert!(matches!(
            assign_addresses(&b.build().unwrap(), 1),
            Err(TopologyError::InvalidAddress { .. })
        ));
    }

    #[test]
    fn oversized_group_is_rejected() {
        let mut b = TopologyBuilder::new();
        let go = b.device("GO");
        let clients: Vec<DeviceId> = (0..254).map(|i| b.device(&format!("C{i}"))).collect();
        b.group(go, &clients, &[]);
        assert!(matches!(
            assign_addresses(&b.build().unwrap(), 0),
            Err(TopologyError::GroupTooLarge { clients: 254, .. })
        ));
    }

    #[test]
    fn group_path_walks_the_tree() {
        let (t, _) = fig4();
        assert_eq!(t.group_path(GroupId(3), GroupId(1)).unwrap(), vec![GroupId(3), GroupId(2), GroupId(1)]);
        assert_eq!(t.group_path(GroupId(1), GroupId(3)).unwrap(), vec![GroupId(1), GroupId(2), GroupId(3)]);
        assert_eq!(t.group_path(GroupId(2), GroupId(2)).unwrap(), vec![GroupId(2)]);
    }
}
