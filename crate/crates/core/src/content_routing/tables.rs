//! Content routing table, pending interest table and content store.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use serde::Serialize;

use super::message::ContentId;
use crate::backbone::Hop;
use crate::time::SimTime;
use crate::topology::DeviceId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CrtEntry {
    /// Gateway toward the provider; the device's own address when local.
    pub next_hop: Ipv4Addr,
    /// The tunnel to use, `None` when this device is the provider.
    pub via: Option<Hop>,
}

impl CrtEntry {
    pub fn next_device(&self) -> Option<DeviceId> {
        self.via.map(|h| h.to)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Crt {
    entries: BTreeMap<ContentId, CrtEntry>,
}

impl Crt {
    pub fn get(&self, id: &ContentId) -> Option<&CrtEntry> {
        self.entries.get(id)
    }

    pub fn next_hop(&self, id: &ContentId) -> Option<Ipv4Addr> {
        self.entries.get(id).map(|e| e.next_hop)
    }

    /// Returns true if the table changed.
    pub fn insert(&mut self, id: ContentId, entry: CrtEntry) -> bool {
        self.entries.insert(id, entry) != Some(entry)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ContentId, &CrtEntry)> {
        self.entries.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct PitKey {
    pub content: ContentId,
    pub chunk: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PitEntry {
    /// Devices the request came from; the device itself stands for a local
    /// application request.
    pub previous_hops: Vec<DeviceId>,
    pub deadline: SimTime,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Pit {
    entries: BTreeMap<PitKey, PitEntry>,
}

impl Pit {
    /// Adds `from` to the entry, creating it with `deadline` if absent.
    /// Returns true when the entry was created.
    pub fn append(&mut self, key: PitKey, from: DeviceId, deadline: SimTime) -> bool {
        match self.entries.get_mut(&key) {
            Some(e) => {
                if !e.previous_hops.contains(&from) {
                    e.previous_hops.push(from);
                }
                false
            }
            None => {
                self.entries.insert(key, PitEntry { previous_hops: vec![from], deadline });
                true
            }
        }
    }

    pub fn take(&mut self, key: &PitKey) -> Option<PitEntry> {
        self.entries.remove(key)
    }

    pub fn get(&self, key: &PitKey) -> Option<&PitEntry> {
        self.entries.get(key)
    }

    /// Removes the entry if its deadline has passed.
    pub fn expire(&mut self, key: &PitKey, now: SimTime) -> Option<PitEntry> {
        if self.entries.get(key).is_some_and(|e| e.deadline <= now) {
            self.entries.remove(key)
        } else {
            None
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StoredContent {
    pub name: String,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ContentStore {
    items: BTreeMap<ContentId, StoredContent>,
}

impl ContentStore {
    pub fn insert(&mut self, name: &str, payload: Vec<u8>) -> ContentId {
        let id = ContentId::from_name(name);
        self.items.insert(id, StoredContent { name: name.to_string(), payload });
        id
    }

    pub fn get(&self, id: &ContentId) -> Option<&StoredContent> {
        self.items.get(id)
    }

    pub fn contains(&self, id: &ContentId) -> bool {
        self.items.contains_key(id)
    }

    /// Number of chunks of `chunk_size` bytes; empty content is one empty chunk.
    pub fn chunk_count(&self, id: &ContentId, chunk_size: usize) -> Option<u32> {
        self.items.get(id).map(|c| chunk_count(c.payload.len(), chunk_size))
    }

    pub fn chunk(&self, id: &ContentId, index: u32, chunk_size: usize) -> Option<&[u8]> {
        let c = self.items.get(id)?;
        if index >= chunk_count(c.payload.len(), chunk_size) {
            return None;
        }
        let start = index as usize * chunk_size;
        let end = (start + chunk_size).min(c.payload.len());
        Some(&c.payload[start.min(end)..end])
    }
}

pub fn chunk_count(len: usize, chunk_size: usize) -> u32 {
    len.div_ceil(chunk_size).max(1) as u32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pit_append_and_expiry() {
        let mut pit = Pit::default();
        let key = PitKey { content: ContentId::from_name("a"), chunk: 0 };
        let t = SimTime::from_nanos(100);
        assert!(pit.append(key, DeviceId(1), t));
        assert!(!pit.append(key, DeviceId(2), SimTime::from_nanos(999)));
        assert!(!pit.append(key, DeviceId(1), t));
        assert_eq!(pit.get(&key).unwrap().previous_hops, [DeviceId(1), DeviceId(2)]);
        assert_eq!(pit.get(&key).unwrap().deadline, t);
        assert!(pit.expire(&key, SimTime::from_nanos(99)).is_none());
        assert!(pit.expire(&key, t).is_some());
        assert!(pit.is_empty());
    }

    #[test]
    fn chunking() {
        let mut s = ContentStore::default();
        let id = s.insert("x", (0..=255u8).cycle().take(3000).collect());
        assert_eq!(s.chunk_count(&id, 1400), Some(3));
        assert_eq!(s.chunk(&id, 2, 1400).unwrap().len(), 200);
        assert!(s.chunk(&id, 3, 1400).is_none());
        let e = s.insert("empty", vec![]);
        assert_eq!(s.chunk_count(&e, 1400), Some(1));
        assert_eq!(s.chunk(&e, 0, 1400), Some(&[][..]));
    }

    #[test]
    fn crt_insert_reports_changes() {
        let mut crt = Crt::default();
        let id = ContentId::from_name("a");
        let e = CrtEntry { next_hop: Ipv4Addr::new(192, 168, 49, 1), via: None };
        assert!(crt.insert(id, e));
        assert!(!crt.insert(id, e));
        assert_eq!(crt.next_hop(&id), Some(e.next_hop));
    }
}
