//! TOML topology description.
//!
//! ```toml
//! name = "fig7"
//! devices = ["GO1", "Client 1A", "Client 1B", "GO2"]
//!
//! [[groups]]
//! id = 1
//! owner = "GO1"
//! p2p_clients = ["Client 1A", "Client 1B"]
//! legacy_clients = ["GO2"]
//! relay = "Client 1B"          # optional: pin the relay client
//!
//! [addresses]                  # optional: pin client interface addresses
//! "GO2" = "192.168.49.134"
//! ```

use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Device, DeviceId, Group, GroupId, PhysicalTopology, Role, TopologyError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    #[serde(default)]
    pub name: String,
    pub devices: Vec<String>,
    #[serde(default)]
    pub groups: Vec<GroupConfig>,
    #[serde(default)]
    pub addresses: BTreeMap<String, Ipv4Addr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub id: u16,
    pub owner: String,
    #[serde(default)]
    pub p2p_clients: Vec<String>,
    #[serde(default)]
    pub legacy_clients: Vec<String>,
    #[serde(default)]
    pub relay: Option<String>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed topology config: {0}")]
    Parse(String),
    #[error("unknown device label {0:?}")]
    UnknownLabel(String),
    #[error("address pinned for {0:?}, which is not a client of any group")]
    NotAClient(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// A parsed topology plus the relay pins it carries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadedTopology {
    pub name: String,
    pub topology: PhysicalTopology,
    pub relay_pins: BTreeMap<GroupId, DeviceId>,
}

impl LoadedTopology {
    /// Validates roles and assigns addresses.
    pub fn addressed(&self, seed: u64) -> Result<PhysicalTopology, TopologyError> {
        super::assign_addresses(&self.topology, seed)
    }
}

impl TopologyConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<LoadedTopology, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)?.resolve()
    }

    /// Resolves labels into ids. Devices get ids in listing order.
    pub fn resolve(&self) -> Result<LoadedTopology, ConfigError> {
        let mut devices: Vec<Device> = self
            .devices
            .iter()
            .enumerate()
            .map(|(i, label)| Device::new(DeviceId(i as u16), label.as_str()))
            .collect();
        let lookup = |label: &str| -> Result<DeviceId, ConfigError> {
            self.devices
                .iter()
                .position(|l| l == label)
                .map(|i| DeviceId(i as u16))
                .ok_or_else(|| ConfigError::UnknownLabel(label.to_string()))
        };

        let mut groups = Vec::with_capacity(self.groups.len());
        let mut relay_pins = BTreeMap::new();
        for g in &self.groups {
            let owner = lookup(&g.owner)?;
            let p2p_clients = g.p2p_clients.iter().map(|l| lookup(l)).collect::<Result<_, _>>()?;
            let legacy_clients = g.legacy_clients.iter().map(|l| lookup(l)).collect::<Result<_, _>>()?;
            if let Some(relay) = &g.relay {
                relay_pins.insert(GroupId(g.id), lookup(relay)?);
            }
            groups.push(Group { id: GroupId(g.id), owner, p2p_clients, legacy_clients });
        }

        for (label, ip) in &self.addresses {
            let id = lookup(label)?;
            let role = groups
                .iter()
                .find_map(|g| match g.role_of(id) {
                    Some(r @ (Role::P2pClient | Role::LegacyClient)) => Some(r),
                    _ => None,
                })
                .ok_or_else(|| ConfigError::NotAClient(label.clone()))?;
            let dev = &mut devices[usize::from(id.0)];
            match role.interface() {
                super::IfaceKind::P2p => dev.p2p.ip = Some(*ip),
                super::IfaceKind::Wifi => dev.wifi.ip = Some(*ip),
            }
        }

        let topology = PhysicalTopology::new(devices, groups)?;
        Ok(LoadedTopology { name: self.name.clone(), topology, relay_pins })
    }
}
