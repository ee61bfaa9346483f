//! Topologies shipped with the crate.

use crate::topology::{LoadedTopology, TopologyConfig};

pub const FIG4: &str = include_str!("../configs/fig4.toml");
pub const FIG7: &str = include_str!("../configs/fig7.toml");
pub const TESTBED: &str = include_str!("../configs/testbed.toml");

fn load(text: &str) -> LoadedTopology {
    TopologyConfig::parse(text)
        .and_then(|c| c.resolve())
        .expect("bundled topology is valid")
}

/// Three groups in a line; also the addressing example.
pub fn fig4() -> LoadedTopology {
    load(FIG4)
}

/// Seven devices, three groups, relays pinned to clients 1B, 2A and 3A.
pub fn fig7() -> LoadedTopology {
    load(FIG7)
}

/// Two-group, five-device testbed used by the throughput and latency scenarios.
pub fn testbed() -> LoadedTopology {
    load(TESTBED)
}

/// Looks a bundled topology up by name.
pub fn by_name(name: &str) -> Option<LoadedTopology> {
    match name {
        "fig4" | "fig5" => Some(fig4()),
        "fig7" => Some(fig7()),
        "testbed" | "fig12" => Some(testbed()),
        _ => None,
    }
}
