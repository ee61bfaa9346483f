//! Random valid multi-group topologies for property tests and experiments.

use rand::Rng;

use super::{DeviceId, PhysicalTopology, TopologyBuilder};

/// Draws a tree of `1..=max_groups` groups with at most `max_devices`
/// devices. Every group gets at least one P2P client so a relay can always
/// be elected; remaining devices join random groups as P2P or plain legacy
/// clients.
///
/// Panics if `max_devices < 2` or `max_groups == 0`.
pub fn random_tree<R: Rng>(rng: &mut R, max_groups: usize, max_devices: usize) -> PhysicalTopology {
    assert!(max_groups >= 1 && max_devices >= 2);
    let groups = rng.gen_range(1..=max_groups.min(max_devices / 2));
    let devices = rng.gen_range(2 * groups..=max_devices);

    let mut b = TopologyBuilder::new();
    let owners: Vec<DeviceId> = (0..groups).map(|i| b.device(&format!("GO{}", i + 1))).collect();
    let mut p2p: Vec<Vec<DeviceId>> = vec![Vec::new(); groups];
    let mut legacy: Vec<Vec<DeviceId>> = vec![Vec::new(); groups];

    for (i, &owner) in owners.iter().enumerate().skip(1) {
        let parent = rng.gen_range(0..i);
        legacy[parent].push(owner);
    }
    let mut next = 0usize;
    let mut client = |b: &mut TopologyBuilder, g: usize| {
        next += 1;
        b.device(&format!("C{}-{}", g + 1, next))
    };
    for (g, list) in p2p.iter_mut().enumerate() {
        list.push(client(&mut b, g));
    }
    for _ in 0..devices - 2 * groups {
        let g = rng.gen_range(0..groups);
        let c = client(&mut b, g);
        if rng.gen_bool(0.75) {
            p2p[g].push(c);
        } else {
            legacy[g].push(c);
        }
    }
    for g in 0..groups {
        b.group(owners[g], &p2p[g], &legacy[g]);
    }
    b.build().expect("generator produces structurally valid topologies")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::validate_roles;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_topologies_validate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let t = random_tree(&mut rng, 8, 30);
            assert!(t.devices().len() <= 30);
            assert!(t.groups().len() <= 8);
            validate_roles(&t).unwrap();
            assert_eq!(t.bridge_links().len(), t.groups().len() - 1);
        }
    }
}
