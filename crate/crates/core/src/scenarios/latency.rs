//! Advertisement latency: a client registers items one after another and
//! we time how long each advertisement takes to cross a chain of devices.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{load_topology, ScenarioError};
use crate::backbone::elect_relays;
use crate::content_routing::{ContentId, Fabric, FabricConfig, Job, MessageType};
use crate::netmodel::ChannelConfig;
use crate::time::{SimDuration, SimTime};
use crate::topology::DeviceId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyConfig {
    pub topology: String,
    /// Device that registers the items.
    pub origin: String,
    /// Devices the advertisement crosses, starting at the origin's GO.
    pub chain: Vec<String>,
    /// Application processing delay per device, ms.
    pub processing_ms: BTreeMap<String, f64>,
    pub registrations: usize,
    /// Seconds between registrations.
    pub spacing: f64,
    pub seed: u64,
    pub channel: ChannelConfig,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Default for LatencyConfig {
    /// Per-hop means measured on the two-group testbed.
    fn default() -> Self {
        LatencyConfig {
            topology: "testbed".into(),
            origin: "Client 1A".into(),
            chain: ["GO1", "Client 1B", "GO2", "Client 2A"].map(String::from).to_vec(),
            processing_ms: [("Client 1B", 250.0), ("GO2", 304.0), ("Client 2A", 226.0)]
                .map(|(k, v)| (k.to_string(), v))
                .into(),
            registrations: 60,
            spacing: 1.0,
            seed: 0,
            channel: ChannelConfig::ideal(),
            base_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HopLatency {
    pub from: String,
    pub to: String,
    pub mean_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub per_hop: Vec<HopLatency>,
    pub end_to_end_mean_ms: f64,
    /// End-to-end latency of every item that crossed the whole chain.
    pub samples_ms: Vec<f64>,
    /// Items whose advertisement never reached the end of the chain.
    pub incomplete: usize,
}

pub fn measure_advertisement_latency(cfg: &LatencyConfig) -> Result<LatencyReport, ScenarioError> {
    if cfg.chain.len() < 2 {
        return Err(ScenarioError::Invalid("chain", "needs at least two devices".into()));
    }
    if !(cfg.spacing.is_finite() && cfg.spacing > 0.0) {
        return Err(ScenarioError::Invalid("spacing", cfg.spacing.to_string()));
    }
    cfg.channel.validate()?;
    let loaded = load_topology(&cfg.topology, cfg.base_dir.as_deref())?;
    let topo = loaded.addressed(cfg.seed)?;
    let relays = elect_relays(&topo, cfg.seed, &loaded.relay_pins)?;
    let lookup = |l: &str| topo.device_by_label(l).ok_or_else(|| ScenarioError::UnknownDevice(l.to_string()));
    let origin = lookup(&cfg.origin)?;
    let chain = cfg.chain.iter().map(|l| lookup(l)).collect::<Result<Vec<DeviceId>, _>>()?;
    let mut processing = BTreeMap::new();
    for (label, ms) in &cfg.processing_ms {
        if !(ms.is_finite() && *ms >= 0.0) {
            return Err(ScenarioError::Invalid("processing_ms", format!("{label} = {ms}")));
        }
        processing.insert(lookup(label)?, SimDuration::from_secs_f64(ms / 1000.0));
    }

    let fcfg = FabricConfig {
        channel: ChannelConfig { seed: cfg.seed, ..cfg.channel.clone() },
        processing,
        seed: cfg.seed,
        ..FabricConfig::default()
    };
    let mut fabric = Fabric::new(Arc::new(topo), relays, fcfg);
    let names: Vec<String> = (0..cfg.registrations).map(|k| format!("item-{k}")).collect();
    for (k, name) in names.iter().enumerate() {
        let at = SimTime::ZERO + SimDuration::from_secs_f64(k as f64 * cfg.spacing);
        fabric.schedule(at, Job::Register { device: origin, name: name.clone(), payload: name.as_bytes().to_vec() });
    }
    fabric.run();

    let adv = MessageType::ContentAdvertisement;
    let mut per_hop = vec![Vec::new(); chain.len() - 1];
    let mut samples = Vec::new();
    let mut incomplete = 0;
    for name in &names {
        let id = ContentId::from_name(name);
        let sent = fabric
            .messages()
            .iter()
            .find(|m| m.kind == adv && m.content == id && m.from == chain[0])
            .map(|m| m.time);
        let mut times = vec![sent];
        times.extend(chain[1..].iter().map(|&d| {
            fabric.processed().iter().find(|p| p.kind == adv && p.content == id && p.device == d).map(|p| p.time)
        }));
        let Some(times) = times.into_iter().collect::<Option<Vec<SimTime>>>() else {
            incomplete += 1;
            continue;
        };
        for (i, w) in times.windows(2).enumerate() {
            per_hop[i].push((w[1] - w[0]).as_millis_f64());
        }
        samples.push((times[times.len() - 1] - times[0]).as_millis_f64());
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok(LatencyReport {
        per_hop: per_hop
            .iter()
            .enumerate()
            .map(|(i, v)| HopLatency { from: cfg.chain[i].clone(), to: cfg.chain[i + 1].clone(), mean_ms: mean(v) })
            .collect(),
        end_to_end_mean_ms: mean(&samples),
        samples_ms: samples,
        incomplete,
    })
}
